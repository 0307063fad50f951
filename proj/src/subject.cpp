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

#include "cmr/subject.hpp"

#include <string>

namespace cmr {

std::string_view to_string(Pathology p) {
  switch (p) {
    case Pathology::NOR: return "NOR";
    case Pathology::DCM: return "DCM";
    case Pathology::HCM: return "HCM";
    case Pathology::DRV: return "DRV";
    case Pathology::UNKNOWN: return "UNKNOWN";
  }
  return "UNKNOWN";
}

std::string_view to_string(Phase p) { return p == Phase::ED ? "ED" : "ES"; }

Pathology parse_pathology(std::string_view s) {
  if (s == "NOR") return Pathology::NOR;
  if (s == "DCM") return Pathology::DCM;
  if (s == "HCM") return Pathology::HCM;
  if (s == "DRV") return Pathology::DRV;
  if (s == "UNKNOWN") return Pathology::UNKNOWN;
  throw InvalidArgumentError("unknown pathology tag '" + std::string(s) + "'");
}

Phase parse_phase(std::string_view s) {
  if (s == "ED") return Phase::ED;
  if (s == "ES") return Phase::ES;
  throw InvalidArgumentError("unknown cardiac phase '" + std::string(s) + "'");
}

void check_label_domain(const LabelVolume& labels) {
  for (auto v : labels.data()) {
    if (v >= kNumClasses) {
      throw LabelDomainError("label value " + std::to_string(int(v)) +
                             " outside {0,1,2,3}");
    }
  }
}

void check_subject(const Subject& subject) {
  if (!subject.labels.empty() && !subject.image.same_shape(subject.labels)) {
    throw ShapeMismatchError("image and label volumes differ in shape");
  }
  check_label_domain(subject.labels);
}

}  // namespace cmr
