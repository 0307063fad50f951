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

#include "cmr/seg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cmr {
namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgumentError(std::string("AugmentConfig: ") + name + " must lie in [0,1]");
}

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw InvalidArgumentError(std::string("AugmentConfig: ") + name + " lower bound exceeds upper bound");
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2) throw InvalidArgumentError(std::string("AugmentConfig: ") + key + " needs [lo, hi]");
  return {v[0], v[1]};
}

// Bilinear displacement field from a coarse grid of N(0, std) control points.
void elastic_field(int rows, int cols, int grid, double std_px, std::mt19937_64& rng, Eigen::MatrixXd& dy,
                   Eigen::MatrixXd& dx) {
  const int gr = rows / grid + 2, gc = cols / grid + 2;
  std::normal_distribution<double> g(0.0, std_px);
  Eigen::MatrixXd ny(gr, gc), nx(gr, gc);
  for (Eigen::Index k = 0; k < ny.size(); ++k) ny.data()[k] = g(rng);
  for (Eigen::Index k = 0; k < nx.size(); ++k) nx.data()[k] = g(rng);
  dy.resize(rows, cols);
  dx.resize(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double fr = double(r) / grid;
    const int r0 = static_cast<int>(fr);
    const double wr = fr - r0;
    for (int c = 0; c < cols; ++c) {
      const double fc = double(c) / grid;
      const int c0 = static_cast<int>(fc);
      const double wc = fc - c0;
      auto lerp = [&](const Eigen::MatrixXd& n) {
        return (1 - wr) * ((1 - wc) * n(r0, c0) + wc * n(r0, c0 + 1)) + wr * ((1 - wc) * n(r0 + 1, c0) + wc * n(r0 + 1, c0 + 1));
      };
      dy(r, c) = lerp(ny);
      dx(r, c) = lerp(nx);
    }
  }
}

}  // namespace

void AugmentConfig::validate() const {
  check_prob(p_scale, "p_scale");
  check_prob(p_rotate, "p_rotate");
  check_prob(p_flip_horizontal, "p_flip_horizontal");
  check_prob(p_flip_vertical, "p_flip_vertical");
  check_prob(p_elastic, "p_elastic");
  check_prob(p_gamma, "p_gamma");
  check_prob(p_brightness_multiplicative, "p_brightness_multiplicative");
  check_prob(p_brightness_additive, "p_brightness_additive");
  check_prob(p_noise, "p_noise");
  check_range(scale, "scale");
  check_range(rotation_deg, "rotation_deg");
  check_range(gamma, "gamma");
  check_range(brightness_factor, "brightness_factor");
  check_range(noise_variance, "noise_variance");
  if (!(scale.lo > 0.0)) throw InvalidArgumentError("AugmentConfig: scale factors must be positive");
  if (!(gamma.lo > 0.0)) throw InvalidArgumentError("AugmentConfig: gamma must be positive");
  if (!(noise_variance.lo >= 0.0)) throw InvalidArgumentError("AugmentConfig: noise variance must be non-negative");
  if (elastic_grid_px < 1 || !(elastic_std_px >= 0.0) || !(brightness_offset_std >= 0.0)) {
    throw InvalidArgumentError("AugmentConfig: invalid elastic or brightness parameters");
  }
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.p_scale = c.p_rotate = c.p_flip_horizontal = c.p_flip_vertical = c.p_elastic = 0.0;
  c.p_gamma = c.p_brightness_multiplicative = c.p_brightness_additive = c.p_noise = 0.0;
  return c;
}

nlohmann::json to_json(const AugmentConfig& c) {
  return {{"p_scale", c.p_scale},
          {"scale", range_json(c.scale)},
          {"p_rotate", c.p_rotate},
          {"rotation_deg", range_json(c.rotation_deg)},
          {"p_flip_horizontal", c.p_flip_horizontal},
          {"p_flip_vertical", c.p_flip_vertical},
          {"p_elastic", c.p_elastic},
          {"elastic_grid_px", c.elastic_grid_px},
          {"elastic_std_px", c.elastic_std_px},
          {"p_gamma", c.p_gamma},
          {"gamma", range_json(c.gamma)},
          {"p_brightness_multiplicative", c.p_brightness_multiplicative},
          {"brightness_factor", range_json(c.brightness_factor)},
          {"p_brightness_additive", c.p_brightness_additive},
          {"brightness_offset_mean", c.brightness_offset_mean},
          {"brightness_offset_std", c.brightness_offset_std},
          {"p_noise", c.p_noise},
          {"noise_variance", range_json(c.noise_variance)}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig c;
  c.p_scale = j.value("p_scale", c.p_scale);
  c.scale = range_from(j, "scale", c.scale);
  c.p_rotate = j.value("p_rotate", c.p_rotate);
  c.rotation_deg = range_from(j, "rotation_deg", c.rotation_deg);
  c.p_flip_horizontal = j.value("p_flip_horizontal", c.p_flip_horizontal);
  c.p_flip_vertical = j.value("p_flip_vertical", c.p_flip_vertical);
  c.p_elastic = j.value("p_elastic", c.p_elastic);
  c.elastic_grid_px = j.value("elastic_grid_px", c.elastic_grid_px);
  c.elastic_std_px = j.value("elastic_std_px", c.elastic_std_px);
  c.p_gamma = j.value("p_gamma", c.p_gamma);
  c.gamma = range_from(j, "gamma", c.gamma);
  c.p_brightness_multiplicative = j.value("p_brightness_multiplicative", c.p_brightness_multiplicative);
  c.brightness_factor = range_from(j, "brightness_factor", c.brightness_factor);
  c.p_brightness_additive = j.value("p_brightness_additive", c.p_brightness_additive);
  c.brightness_offset_mean = j.value("brightness_offset_mean", c.brightness_offset_mean);
  c.brightness_offset_std = j.value("brightness_offset_std", c.brightness_offset_std);
  c.p_noise = j.value("p_noise", c.p_noise);
  c.noise_variance = range_from(j, "noise_variance", c.noise_variance);
  c.validate();
  return c;
}

LabeledSlice augment(const LabeledSlice& sample, const AugmentConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (sample.image.rows() != sample.labels.rows() || sample.image.cols() != sample.labels.cols()) {
    throw ShapeMismatchError("augment: image and labels differ in shape");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](const Range& r) { return r.lo + (r.hi - r.lo) * u(rng); };
  const int R = static_cast<int>(sample.image.rows()), C = static_cast<int>(sample.image.cols());
  LabeledSlice out = sample;

  double scale = 1.0, angle = 0.0;
  bool flip_h = false, flip_v = false, geometric = false;
  Eigen::MatrixXd ey, ex;
  if (u(rng) < config.p_scale) {
    scale = uniform(config.scale);
    geometric = true;
  }
  if (u(rng) < config.p_rotate) {
    angle = uniform(config.rotation_deg) * std::numbers::pi / 180.0;
    geometric = true;
  }
  if (u(rng) < config.p_flip_horizontal) flip_h = geometric = true;
  if (u(rng) < config.p_flip_vertical) flip_v = geometric = true;
  const bool elastic = u(rng) < config.p_elastic;
  if (elastic) {
    elastic_field(R, C, config.elastic_grid_px, config.elastic_std_px, rng, ey, ex);
    geometric = true;
  }

  if (geometric) {
    const float fill = sample.image.size() ? sample.image.minCoeff() : 0.0f;
    const double cy = 0.5 * (R - 1), cx = 0.5 * (C - 1);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < C; ++c) {
        double y = r - cy, x = c - cx;
        if (flip_v) y = -y;
        if (flip_h) x = -x;
        double sy = (ca * y + sa * x) / scale + cy;
        double sx = (-sa * y + ca * x) / scale + cx;
        if (elastic) {
          sy += ey(r, c);
          sx += ex(r, c);
        }
        const long ny = std::lround(sy), nx = std::lround(sx);
        out.labels(r, c) = (ny >= 0 && ny < R && nx >= 0 && nx < C) ? sample.labels(ny, nx) : std::uint8_t{0};
        const double fy = std::floor(sy), fx = std::floor(sx);
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const double wy = sy - fy, wx = sx - fx;
        auto px = [&](int yy, int xx) -> double {
          return (yy >= 0 && yy < R && xx >= 0 && xx < C) ? sample.image(yy, xx) : fill;
        };
        if (sy < -0.5 || sy > R - 0.5 || sx < -0.5 || sx > C - 0.5) {
          out.image(r, c) = fill;
        } else {
          out.image(r, c) = static_cast<float>((1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                                               wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1)));
        }
      }
    }
  }

  auto& img = out.image;
  if (u(rng) < config.p_gamma && img.size() > 0) {
    const double g = uniform(config.gamma);
    const double lo = img.minCoeff(), hi = img.maxCoeff();
    if (hi > lo) {
      img = img.unaryExpr([&](float v) { return static_cast<float>(lo + (hi - lo) * std::pow((v - lo) / (hi - lo), g)); });
    }
  }
  if (u(rng) < config.p_brightness_multiplicative) img *= static_cast<float>(uniform(config.brightness_factor));
  if (u(rng) < config.p_brightness_additive) {
    std::normal_distribution<double> g(config.brightness_offset_mean, config.brightness_offset_std);
    img.array() += static_cast<float>(g(rng));
  }
  if (u(rng) < config.p_noise) {
    std::normal_distribution<double> g(0.0, std::sqrt(uniform(config.noise_variance)));
    for (Eigen::Index k = 0; k < img.size(); ++k) img.data()[k] += static_cast<float>(g(rng));
  }
  return out;
}

}  // namespace cmr
