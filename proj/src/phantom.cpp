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

#include "cmr/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace cmr {
namespace {

struct Radii {
  double lv, myo, rv;
};

Radii base_radii(Pathology p) {
  switch (p) {
    case Pathology::DCM: return {34.0, 7.0, 22.0};
    case Pathology::HCM: return {19.0, 15.0, 21.0};
    case Pathology::DRV: return {23.0, 8.0, 34.0};
    case Pathology::NOR:
    case Pathology::UNKNOWN: break;
  }
  return {24.0, 8.0, 22.0};
}

double profile(double z, double depth) {
  const double u = z / depth;
  return u >= 1.0 ? 0.0 : std::sqrt(1.0 - u * u);
}

bool inside(double dr, double dc, double semi_r, double semi_c) {
  if (semi_r <= 0.0 || semi_c <= 0.0) return false;
  const double a = dr / semi_r;
  const double b = dc / semi_c;
  return a * a + b * b <= 1.0;
}

// Separable Gaussian blur of one plane, clamped borders.
void blur(std::vector<double>& plane, int rows, int cols, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[i + radius];
  }
  for (auto& k : kernel) k /= norm;
  std::vector<double> tmp(plane.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * plane[r * cols + std::clamp(c + k, 0, cols - 1)];
      }
      tmp[r * cols + c] = acc;
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * tmp[std::clamp(r + k, 0, rows - 1) * cols + c];
      }
      plane[r * cols + c] = acc;
    }
  }
}

struct Blob {
  double r, c, semi_r, semi_c, intensity;
};

}  // namespace

std::array<double, kNumClasses> vendor_intensities(const std::string& vendor) {
  if (vendor == "B") return {520.0, 640.0, 300.0, 700.0};
  return {420.0, 820.0, 220.0, 960.0};
}

void PhantomParams::validate() const {
  if (!(lv_radius_mm > 0 && myo_thickness_mm > 0 && rv_radius_mm > 0)) {
    throw InvalidArgumentError("phantom radii must be positive");
  }
  if (n_slices < 6 || n_slices > 13) throw InvalidArgumentError("phantom n_slices must lie in [6,13]");
  if (!(apex_taper > 0.0 && apex_taper <= 1.0)) {
    throw InvalidArgumentError("phantom apex_taper must lie in (0,1]");
  }
  if (!(inplane_mm > 0 && slice_mm > 0) || grid_px < 16) {
    throw InvalidArgumentError("phantom grid must be positive");
  }
  // Heart extent (LV + wall + RV on the septal side) must stay inside the field of view.
  const double half_fov = 0.5 * grid_px * inplane_mm;
  const double lateral = lv_radius_mm + myo_thickness_mm;
  const double septal = 0.95 * lateral + rv_radius_mm;
  const double vertical = std::max(lateral * 0.9, 1.35 * rv_radius_mm + 0.15 * rv_radius_mm);
  const double margin = 4.0 * inplane_mm;
  if (std::abs(center_offset_col_mm) + std::max(lateral, septal) + margin > half_fov ||
      std::abs(center_offset_row_mm) + vertical + margin > half_fov) {
    throw DegenerateInputError("phantom anatomy exceeds the field of view");
  }
}

PhantomParams phantom_preset(Pathology pathology, std::uint64_t seed, double severity, Phase phase) {
  const Radii nor = base_radii(Pathology::NOR);
  const Radii target = base_radii(pathology);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 1);
  std::uniform_real_distribution<double> jitter(0.94, 1.06);
  std::uniform_real_distribution<double> offset(-15.0, 15.0);
  std::uniform_int_distribution<int> slices(8, 11);
  std::uniform_real_distribution<double> taper(0.85, 1.0);

  PhantomParams p;
  p.pathology = pathology;
  p.phase = phase;
  p.lv_radius_mm = (nor.lv + severity * (target.lv - nor.lv)) * jitter(rng);
  p.myo_thickness_mm = (nor.myo + severity * (target.myo - nor.myo)) * jitter(rng);
  p.rv_radius_mm = (nor.rv + severity * (target.rv - nor.rv)) * jitter(rng);
  p.n_slices = slices(rng);
  p.apex_taper = taper(rng);
  p.center_offset_row_mm = offset(rng);
  p.center_offset_col_mm = offset(rng);
  p.texture_seed = rng();
  if (phase == Phase::ES) {
    p.lv_radius_mm *= 0.75;
    p.myo_thickness_mm *= 1.25;
    p.rv_radius_mm *= 0.8;
  }
  char id[64];
  std::snprintf(id, sizeof id, "%s_%04llu", std::string(to_string(pathology)).c_str(),
                static_cast<unsigned long long>(seed));
  p.subject_id = id;
  return p;
}

double analytic_lv_volume_mm3(const PhantomParams& p) {
  const double length = p.n_slices * p.slice_mm;
  const double depth = length / p.apex_taper;
  const double a = p.lv_radius_mm;
  const double b = 0.85 * p.lv_radius_mm;
  return std::numbers::pi * a * b * (length - length * length * length / (3.0 * depth * depth));
}

Subject generate_phantom(const PhantomParams& p) {
  p.validate();
  const int n = p.grid_px;
  const double px = p.inplane_mm;
  const double length = p.n_slices * p.slice_mm;
  const double depth = length / p.apex_taper;
  const double rv_depth = 0.8 * depth;
  const auto levels = vendor_intensities(p.vendor);

  Subject s;
  s.meta = {p.subject_id, p.pathology, p.vendor, p.phase};
  s.spacing = {px, px, p.slice_mm};
  s.image = ImageVolume(p.n_slices, n, n);
  s.labels = LabelVolume(p.n_slices, n, n);

  std::mt19937_64 rng(p.texture_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const double center = 0.5 * (n - 1) * px;
  const double hr = center + p.center_offset_row_mm;
  const double hc = center + p.center_offset_col_mm;

  // Body outline and a few non-cardiac structures, shared by all slices.
  const double body_r = 0.46 * n * px * (0.92 + 0.08 * uni(rng));
  const double body_c = 0.48 * n * px * (0.92 + 0.08 * uni(rng));
  std::vector<Blob> blobs;
  for (int i = 0; i < 5; ++i) {
    const double ang = 2.0 * std::numbers::pi * uni(rng);
    const double dist = (0.55 + 0.3 * uni(rng)) * 0.5 * n * px;
    blobs.push_back({center + dist * std::sin(ang), center + dist * std::cos(ang),
                     (8.0 + 14.0 * uni(rng)), (8.0 + 14.0 * uni(rng)),
                     levels[0] * (0.5 + 0.9 * uni(rng))});
  }

  for (int sl = 0; sl < p.n_slices; ++sl) {
    const double z = (sl + 0.5) * p.slice_mm;
    const double pz = profile(z, depth);
    const double prv = profile(z, rv_depth);
    const double lv_a = p.lv_radius_mm * pz;  // along columns
    const double lv_b = 0.85 * p.lv_radius_mm * pz;
    const double wall = p.myo_thickness_mm * (0.6 + 0.4 * pz);
    const bool has_lv = lv_b > 0.75 * px;
    const double out_a = has_lv ? lv_a + wall : 0.0;
    const double out_b = has_lv ? lv_b + wall : 0.0;
    const double rv_c = p.rv_radius_mm * prv;
    const double rv_r = 1.35 * p.rv_radius_mm * prv;
    const double rv_dc = -(p.lv_radius_mm + p.myo_thickness_mm) * 0.95;
    const double rv_dr = -0.15 * p.rv_radius_mm;

    std::vector<double> noise(static_cast<std::size_t>(n) * n);
    for (auto& v : noise) v = gauss(rng);
    blur(noise, n, n, 2.0);

    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const double y = r * px;
        const double x = c * px;
        const double dr = y - hr;
        const double dc = x - hc;
        std::uint8_t label = 0;
        if (has_lv && inside(dr, dc, lv_b, lv_a)) {
          label = 3;
        } else if (has_lv && inside(dr, dc, out_b, out_a)) {
          label = 2;
        } else if (inside(dr - rv_dr, dc - rv_dc, rv_r, rv_c)) {
          label = 1;
        }
        s.labels(sl, r, c) = label;

        double value;
        if (label != 0) {
          value = levels[label];
        } else if (inside(y - center, x - center, body_r, body_c)) {
          value = levels[0];
          for (const auto& b : blobs) {
            if (inside(y - b.r, x - b.c, b.semi_r, b.semi_c)) value = b.intensity;
          }
        } else {
          value = 0.04 * levels[0];
        }
        // Noise amplitude ~6% of the tissue level, band-limited by the blur.
        value += 0.06 * levels[0] * 3.0 * noise[static_cast<std::size_t>(r) * n + c];
        s.image(sl, r, c) = static_cast<float>(std::max(0.0, value));
      }
    }
  }
  return s;
}

std::vector<PhantomParams> cohort_params(const CohortSpec& spec) {
  std::vector<PhantomParams> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    auto p = phantom_preset(spec.pathology, spec.seed + static_cast<std::uint64_t>(i), spec.severity);
    p.vendor = spec.vendor;
    if (!spec.id_prefix.empty()) {
      char id[96];
      std::snprintf(id, sizeof id, "%s%s_%04d", spec.id_prefix.c_str(),
                    std::string(to_string(spec.pathology)).c_str(), i);
      p.subject_id = id;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace cmr
