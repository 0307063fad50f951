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

#include "cmr/seg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace cmr {
namespace {

struct Voxel {
  double z, y, x;  // millimetres
};

std::vector<Voxel> boundary(const LabelVolume& v, int cls, const Spacing& sp) {
  std::vector<Voxel> out;
  const int S = v.slices(), R = v.rows(), C = v.cols();
  auto in = [&](int s, int r, int c) {
    return s >= 0 && s < S && r >= 0 && r < R && c >= 0 && c < C && v(s, r, c) == cls;
  };
  for (int s = 0; s < S; ++s)
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        if (v(s, r, c) != cls) continue;
        if (!in(s - 1, r, c) || !in(s + 1, r, c) || !in(s, r - 1, c) || !in(s, r + 1, c) || !in(s, r, c - 1) ||
            !in(s, r, c + 1)) {
          out.push_back({s * sp.slice_mm, r * sp.row_mm, c * sp.col_mm});
        }
      }
  return out;
}

// Largest distance from a point of a to its nearest point of b, with the
// early break of the inner loop once a point is closer than the running max.
double directed(const std::vector<Voxel>& a, const std::vector<Voxel>& b) {
  double cmax = 0.0;
  for (const auto& p : a) {
    double cmin = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double d = (p.z - q.z) * (p.z - q.z) + (p.y - q.y) * (p.y - q.y) + (p.x - q.x) * (p.x - q.x);
      if (d < cmin) {
        cmin = d;
        if (cmin <= cmax) break;
      }
    }
    cmax = std::max(cmax, cmin);
  }
  return std::sqrt(cmax);
}

}  // namespace

std::array<double, kNumClasses> ventricular_volumes(const Subject& subject) {
  const auto& sp = subject.spacing;
  if (!(sp.row_mm > 0 && sp.col_mm > 0 && sp.slice_mm > 0) || !std::isfinite(sp.row_mm * sp.col_mm * sp.slice_mm)) {
    throw InvalidArgumentError("ventricular_volumes: subject has no valid voxel spacing");
  }
  check_label_domain(subject.labels);
  std::array<double, kNumClasses> count{};
  for (auto v : subject.labels.data()) count[v] += 1.0;
  const double ml = sp.row_mm * sp.col_mm * sp.slice_mm / 1000.0;
  for (auto& c : count) c *= ml;
  return count;
}

double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id) {
  if (!pred.same_shape(gt)) throw ShapeMismatchError("dice: volumes differ in shape");
  std::size_t inter = 0, p = 0, g = 0;
  const auto& a = pred.data();
  const auto& b = gt.data();
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool x = a[k] == class_id, y = b[k] == class_id;
    p += x;
    g += y;
    inter += x && y;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * double(inter) / double(p + g);
}

std::optional<double> hausdorff(const LabelVolume& pred, const LabelVolume& gt, int class_id, const Spacing& spacing) {
  if (!pred.same_shape(gt)) throw ShapeMismatchError("hausdorff: volumes differ in shape");
  const auto a = boundary(pred, class_id, spacing);
  const auto b = boundary(gt, class_id, spacing);
  if (a.empty() || b.empty()) return std::nullopt;
  return std::max(directed(a, b), directed(b, a));
}

LabelVolume largest_component_filter(const LabelVolume& labels) {
  check_label_domain(labels);
  LabelVolume out = labels;
  const int S = labels.slices(), R = labels.rows(), C = labels.cols();
  const std::size_t n = labels.size();
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> stack;
  const auto& d = labels.data();
  for (int cls = 1; cls < kNumClasses; ++cls) {
    std::vector<std::size_t> sizes;
    for (std::size_t start = 0; start < n; ++start) {
      if (d[start] != cls || comp[start] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      std::size_t size = 0;
      comp[start] = id;
      stack.push_back(start);
      while (!stack.empty()) {
        const std::size_t k = stack.back();
        stack.pop_back();
        ++size;
        const int s = static_cast<int>(k / labels.plane_size());
        const int r = static_cast<int>((k / C) % R);
        const int c = static_cast<int>(k % C);
        for (int ds = -1; ds <= 1; ++ds)
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const int s2 = s + ds, r2 = r + dr, c2 = c + dc;
              if (s2 < 0 || s2 >= S || r2 < 0 || r2 >= R || c2 < 0 || c2 >= C) continue;
              const std::size_t k2 = (std::size_t(s2) * R + r2) * C + c2;
              if (d[k2] == cls && comp[k2] < 0) {
                comp[k2] = id;
                stack.push_back(k2);
              }
            }
      }
      sizes.push_back(size);
    }
    if (sizes.size() < 2) continue;
    const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t k = 0; k < n; ++k)
      if (d[k] == cls && comp[k] != keep) out.data()[k] = 0;
  }
  return out;
}

}  // namespace cmr
