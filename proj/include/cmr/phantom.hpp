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
#include <string>
#include <vector>

#include "cmr/subject.hpp"

namespace cmr {

/// Parametric nested-ellipse cardiac anatomy.
///
/// The LV blood pool is a stack of elliptical sections through a
/// half-ellipsoid whose long axis runs base-to-apex; the myocardium is a ring
/// around it and the RV a crescent attached on the septal side. Radii are
/// semi-axes in millimetres at the base slice.
struct PhantomParams {
  std::string subject_id = "phantom";
  Pathology pathology = Pathology::NOR;
  Phase phase = Phase::ED;
  std::string vendor = "A";  // "A": high blood-pool contrast, "B": low contrast

  double lv_radius_mm = 24.0;
  double myo_thickness_mm = 8.0;
  double rv_radius_mm = 22.0;
  int n_slices = 10;
  double apex_taper = 1.0;  // (0,1]; 1 closes the ellipsoid at the last slice
  std::uint64_t texture_seed = 0;

  double inplane_mm = 1.25;
  double slice_mm = 10.0;
  int grid_px = 176;
  double center_offset_row_mm = 0.0;
  double center_offset_col_mm = 0.0;

  void validate() const;
};

/// Preset parameters for a pathology class.
///
/// \p severity scales the deviation from the NOR preset (1 = nominal,
/// larger values give out-of-distribution disease). \p seed jitters radii,
/// slice count, taper and position so each subject is distinct.
PhantomParams phantom_preset(Pathology pathology, std::uint64_t seed, double severity = 1.0,
                             Phase phase = Phase::ED);

/// Renders a subject at the native phantom grid (not yet preprocessed).
Subject generate_phantom(const PhantomParams& params);

/// Analytic LV blood-pool volume in mm^3 of the truncated half-ellipsoid
/// covered by the slice stack.
double analytic_lv_volume_mm3(const PhantomParams& params);

/// Per-class base intensities (background tissue, RV, myocardium, LV) in
/// scanner units for a vendor tag.
std::array<double, kNumClasses> vendor_intensities(const std::string& vendor);

struct CohortSpec {
  Pathology pathology = Pathology::NOR;
  int count = 10;
  std::uint64_t seed = 0;
  double severity = 1.0;
  std::string vendor = "A";
  std::string id_prefix;
};

std::vector<PhantomParams> cohort_params(const CohortSpec& spec);

}  // namespace cmr
