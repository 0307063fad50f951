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
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cmr/subject.hpp"

namespace cmr {

/// Per-slice one-hot class indicator map. Row c of `channels` is the
/// contiguous H*W plane for class c (background, RV, myocardium, LV).
struct OneHotLabelMap {
  using Channels = Eigen::Matrix<float, kNumClasses, Eigen::Dynamic, Eigen::RowMajor>;

  int height = 0;
  int width = 0;
  Channels channels;
};

OneHotLabelMap one_hot(std::span<const std::uint8_t> labels, int height, int width);
OneHotLabelMap one_hot(const LabelVolume& labels, int slice);

/// Per-pixel argmax over channels (first maximum wins on ties).
std::vector<std::uint8_t> argmax(const OneHotLabelMap& map);

Subject resample_inplane(const Subject& subject, double target_mm = 1.5);

/// Crops a size_px x size_px window centred on the 3D centroid of all
/// non-background voxels. All slices share one window. Out-of-bounds
/// pixels take the background label and the minimum image intensity.
Subject crop_around_heart(const Subject& subject, int size_px = 128);

/// Maps the lo/hi percentiles of the image to -1/+1 and clips outside.
///
/// Percentiles use nearest-rank selection (lower rank for \p lo_pct, upper
/// rank for \p hi_pct) so that a second application is the identity.
Subject normalize_intensity(const Subject& subject, double lo_pct = 1.0, double hi_pct = 99.0);

struct PreprocessOptions {
  double target_mm = 1.5;
  int size_px = 128;
  double lo_pct = 1.0;
  double hi_pct = 99.0;
};

/// resample -> crop -> normalize.
Subject preprocess(const Subject& subject, const PreprocessOptions& options = {});

/// True when in-plane geometry matches the model input contract.
bool is_conforming(const Subject& subject, const PreprocessOptions& options = {});

/// Nearest-rank percentile; \p upper selects ceil instead of floor of the rank.
float percentile(std::vector<float> values, double pct, bool upper);

}  // namespace cmr
