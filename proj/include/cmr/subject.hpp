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
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "cmr/volume.hpp"

namespace cmr {

inline constexpr int kNumClasses = 4;

enum class LabelClass : std::uint8_t {
  Background = 0,
  RightVentricle = 1,
  Myocardium = 2,
  LeftVentricle = 3,
};

enum class Pathology { NOR, DCM, HCM, DRV, UNKNOWN };
enum class Phase { ED, ES };

std::string_view to_string(Pathology p);
std::string_view to_string(Phase p);
Pathology parse_pathology(std::string_view s);
Phase parse_phase(std::string_view s);

struct Spacing {
  double row_mm = 1.0;
  double col_mm = 1.0;
  double slice_mm = 1.0;

  bool operator==(const Spacing&) const = default;
};

struct SubjectMeta {
  std::string subject_id;
  Pathology pathology = Pathology::UNKNOWN;
  std::string vendor;
  Phase phase = Phase::ED;

  bool operator==(const SubjectMeta&) const = default;
};

struct Subject {
  ImageVolume image;
  LabelVolume labels;
  Spacing spacing;
  SubjectMeta meta;

  bool operator==(const Subject&) const = default;
};

/// Throws LabelDomainError if any voxel is outside {0,1,2,3}.
void check_label_domain(const LabelVolume& labels);

/// Throws ShapeMismatchError / LabelDomainError when the subject invariants fail.
void check_subject(const Subject& subject);

}  // namespace cmr
