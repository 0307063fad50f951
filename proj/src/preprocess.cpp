/*
 * Copyright 2026 The cmrsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cmr/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cmr {

OneHotLabelMap one_hot(std::span<const std::uint8_t> labels, int height, int width) {
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeMismatchError("one_hot: label buffer does not match height*width");
  }
  OneHotLabelMap map;
  map.height = height;
  map.width = width;
  map.channels = OneHotLabelMap::Channels::Zero(kNumClasses, labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) {
      throw LabelDomainError("one_hot: label value " + std::to_string(int(labels[i])) +
                             " outside {0,1,2,3}");
    }
    map.channels(labels[i], static_cast<Eigen::Index>(i)) = 1.0f;
  }
  return map;
}

OneHotLabelMap one_hot(const LabelVolume& labels, int slice) {
  return one_hot(labels.slice(slice), labels.rows(), labels.cols());
}

std::vector<std::uint8_t> argmax(const OneHotLabelMap& map) {
  std::vector<std::uint8_t> out(map.channels.cols());
  for (Eigen::Index i = 0; i < map.channels.cols(); ++i) {
    Eigen::Index best = 0;
    map.channels.col(i).maxCoeff(&best);
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Subject resample_inplane(const Subject& subject, double target_mm) {
  if (!(target_mm > 0.0)) throw InvalidArgumentError("resample_inplane: target spacing must be positive");
  const auto& sp = subject.spacing;
  if (!(sp.row_mm > 0.0 && sp.col_mm > 0.0 && sp.slice_mm > 0.0)) {
    throw InvalidArgumentError("resample_inplane: subject spacing must be positive");
  }
  check_subject(subject);

  const int rows = subject.image.rows();
  const int cols = subject.image.cols();
  const int slices = subject.image.slices();
  const int out_rows = std::max(1, static_cast<int>(std::lround(rows * sp.row_mm / target_mm)));
  const int out_cols = std::max(1, static_cast<int>(std::lround(cols * sp.col_mm / target_mm)));
  const double row_step = target_mm / sp.row_mm;
  const double col_step = target_mm / sp.col_mm;

  struct Tap {
    int i0, i1, nearest;
    double f;
  };
  auto taps = [](int n_out, int n_in, double step) {
    std::vector<Tap> t(n_out);
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * step - 0.5;
      src = std::clamp(src, 0.0, double(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      const int nearest = std::min(static_cast<int>(std::floor(src + 0.5)), n_in - 1);
      t[o] = {i0, i1, nearest, src - i0};
    }
    return t;
  };
  const auto rt = taps(out_rows, rows, row_step);
  const auto ct = taps(out_cols, cols, col_step);

  Subject out;
  out.meta = subject.meta;
  out.spacing = {target_mm, target_mm, sp.slice_mm};
  out.image = ImageVolume(slices, out_rows, out_cols);
  const bool has_labels = !subject.labels.empty();
  if (has_labels) out.labels = LabelVolume(slices, out_rows, out_cols);

  for (int s = 0; s < slices; ++s) {
    for (int r = 0; r < out_rows; ++r) {
      const auto& R = rt[r];
      for (int c = 0; c < out_cols; ++c) {
        const auto& C = ct[c];
        const double v00 = subject.image(s, R.i0, C.i0);
        const double v01 = subject.image(s, R.i0, C.i1);
        const double v10 = subject.image(s, R.i1, C.i0);
        const double v11 = subject.image(s, R.i1, C.i1);
        const double top = v00 + (v01 - v00) * C.f;
        const double bottom = v10 + (v11 - v10) * C.f;
        out.image(s, r, c) = static_cast<float>(top + (bottom - top) * R.f);
        if (has_labels) out.labels(s, r, c) = subject.labels(s, R.nearest, C.nearest);
      }
    }
  }
  return out;
}

Subject crop_around_heart(const Subject& subject, int size_px) {
  if (size_px <= 0) throw InvalidArgumentError("crop_around_heart: size must be positive");
  check_subject(subject);
  if (subject.labels.empty()) throw InvalidArgumentError("crop_around_heart: subject has no labels");

  const auto& L = subject.labels;
  double sum_r = 0.0, sum_c = 0.0;
  std::size_t count = 0;
  for (int s = 0; s < L.slices(); ++s) {
    for (int r = 0; r < L.rows(); ++r) {
      for (int c = 0; c < L.cols(); ++c) {
        if (L(s, r, c) != 0) {
          sum_r += r;
          sum_c += c;
          ++count;
        }
      }
    }
  }
  if (count == 0) throw DegenerateInputError("crop_around_heart: label volume is all background");

  const double cr = sum_r / count;
  const double cc = sum_c / count;
  const int r0 = static_cast<int>(std::floor(cr - size_px / 2.0 + 0.5));
  const int c0 = static_cast<int>(std::floor(cc - size_px / 2.0 + 0.5));
  const float pad = subject.image.empty()
                        ? 0.0f
                        : *std::min_element(subject.image.data().begin(), subject.image.data().end());

  Subject out;
  out.meta = subject.meta;
  out.spacing = subject.spacing;
  out.image = ImageVolume(L.slices(), size_px, size_px, pad);
  out.labels = LabelVolume(L.slices(), size_px, size_px, 0);
  for (int s = 0; s < L.slices(); ++s) {
    for (int r = 0; r < size_px; ++r) {
      const int sr = r0 + r;
      if (sr < 0 || sr >= L.rows()) continue;
      for (int c = 0; c < size_px; ++c) {
        const int sc = c0 + c;
        if (sc < 0 || sc >= L.cols()) continue;
        out.image(s, r, c) = subject.image(s, sr, sc);
        out.labels(s, r, c) = L(s, sr, sc);
      }
    }
  }
  return out;
}

float percentile(std::vector<float> values, double pct, bool upper) {
  if (values.empty()) throw InvalidArgumentError("percentile of empty set");
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * double(values.size() - 1);
  auto rank = static_cast<std::size_t>(upper ? std::ceil(pos) : std::floor(pos));
  rank = std::min(rank, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
  return values[rank];
}

Subject normalize_intensity(const Subject& subject, double lo_pct, double hi_pct) {
  if (!(hi_pct > lo_pct)) throw InvalidArgumentError("normalize_intensity: hi_pct must exceed lo_pct");
  const auto& data = subject.image.data();
  const float lo = percentile(data, lo_pct, false);
  const float hi = percentile(data, hi_pct, true);
  if (!(hi > lo)) {
    throw DegenerateInputError("normalize_intensity: percentiles coincide (constant volume?)");
  }
  Subject out = subject;
  const double scale = 2.0 / (double(hi) - double(lo));
  for (auto& v : out.image.data()) {
    const double mapped = (double(v) - lo) * scale - 1.0;
    v = static_cast<float>(std::clamp(mapped, -1.0, 1.0));
  }
  return out;
}

Subject preprocess(const Subject& subject, const PreprocessOptions& options) {
  return normalize_intensity(
      crop_around_heart(resample_inplane(subject, options.target_mm), options.size_px),
      options.lo_pct, options.hi_pct);
}

bool is_conforming(const Subject& subject, const PreprocessOptions& options) {
  return subject.image.rows() == options.size_px && subject.image.cols() == options.size_px &&
         subject.spacing.row_mm == options.target_mm && subject.spacing.col_mm == options.target_mm;
}

}  // namespace cmr
