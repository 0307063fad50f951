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

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "json.hpp"

#include "cmr/gen/gan.hpp"

namespace cmr {

using LabelSlice = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledSlice {
  ImageSlice image;
  LabelSlice labels;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Transform probabilities and parameter ranges. Geometric transforms move
/// image and labels together (bilinear / nearest neighbour); intensity
/// transforms touch the image only.
struct AugmentConfig {
  double p_scale = 0.3;
  Range scale{0.7, 1.4};
  double p_rotate = 0.7;
  Range rotation_deg{-60.0, 60.0};
  double p_flip_horizontal = 0.3;
  double p_flip_vertical = 0.3;
  double p_elastic = 0.3;
  int elastic_grid_px = 32;
  double elastic_std_px = 6.0;
  double p_gamma = 0.3;
  Range gamma{0.5, 1.6};
  /// Multiplicative brightness factor.
  double p_brightness_multiplicative = 0.3;
  Range brightness_factor{0.7, 1.3};
  /// Additive brightness offset ~ N(mean, std).
  double p_brightness_additive = 0.3;
  double brightness_offset_mean = 0.0;
  double brightness_offset_std = 0.3;
  /// Gaussian noise with variance drawn from noise_variance.
  double p_noise = 0.2;
  Range noise_variance{0.0, 0.1};

  void validate() const;
  /// Every probability zero.
  static AugmentConfig none();
};

nlohmann::json to_json(const AugmentConfig& config);
AugmentConfig augment_config_from_json(const nlohmann::json& j);

/// Applies each transform independently with its probability. Pixels mapped
/// from outside the slice take background and the minimum image value.
LabeledSlice augment(const LabeledSlice& sample, const AugmentConfig& config, std::mt19937_64& rng);

}  // namespace cmr
