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

#include <array>
#include <optional>

#include "cmr/subject.hpp"

namespace cmr {

/// Volume in millilitres of each label class (index = class id).
std::array<double, kNumClasses> ventricular_volumes(const Subject& subject);

/// 2|P and G| / (|P| + |G|) for one class; 1 when both masks are empty.
double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id);

/// Symmetric Hausdorff distance in mm between the boundary voxels of the two
/// class masks. A voxel is on the boundary when at least one of its six face
/// neighbours lies outside the mask (the volume edge counts as outside).
/// Empty when either mask is empty.
std::optional<double> hausdorff(const LabelVolume& pred, const LabelVolume& gt, int class_id, const Spacing& spacing);

/// Keeps, for every foreground class, only its largest 26-connected
/// component; other voxels of the class become background. Ties keep the
/// component found first in voxel order.
LabelVolume largest_component_filter(const LabelVolume& labels);

}  // namespace cmr
