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
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cmr/latent/numeric.hpp"
#include "cmr/subject.hpp"
#include "cmr/vae.hpp"

namespace cmr::latent {

/// Latent coordinates of one subject, one row per short-axis slice
/// (base to apex).
struct LatentSubject {
  Eigen::MatrixXd codes;  // n_s x n_z
  std::string subject_id;

  Eigen::Index n_s() const { return codes.rows(); }
  Eigen::Index n_z() const { return codes.cols(); }
  bool operator==(const LatentSubject&) const = default;
};

inline constexpr int kInterpolatedSlices = 32;

/// Per-slice, per-dimension statistics of a pathology cohort.
struct PathologyStats {
  Eigen::MatrixXd mu, sigma, min, max;  // each n_s x n_z
  Pathology pathology = Pathology::UNKNOWN;
  int n_subjects = 0;
};

struct CorrelationModel {
  Eigen::MatrixXd corr_z, chol_z;  // n_z x n_z
  Eigen::MatrixXd corr_s, chol_s;  // n_s x n_s
  double jitter_z = 0.0, jitter_s = 0.0;
};

/// Row i is the encoder mean of slice i. The subject must already be
/// preprocessed to the model input size.
LatentSubject encode_subject(Vae& model, const Subject& subject);

/// Resamples every latent dimension along the slice axis with a cubic spline
/// over normalised slice position; first and last rows are kept exactly.
LatentSubject intra_subject_interpolate(const LatentSubject& ls, int n_target = kInterpolatedSlices,
                                        SplineBoundary boundary = SplineBoundary::NotAKnot);

/// Output k is (1 - alphas[k]) * a + alphas[k] * b.
std::vector<LatentSubject> inter_subject_interpolate(const LatentSubject& a, const LatentSubject& b,
                                                     const std::vector<double>& alphas);

/// Elementwise mean, population standard deviation, min and max across the cohort.
PathologyStats estimate_pathology_stats(const std::vector<LatentSubject>& cohort, Pathology tag);

/// Independent truncated-normal draw for every (slice, dimension) entry.
LatentSubject sample_truncated_normal(const PathologyStats& stats, std::mt19937_64& rng);

/// corr_z from all slices of \p cohort (samples) over latent dimensions;
/// corr_s from the latent dimensions of \p reference (samples) over slices.
CorrelationModel estimate_correlation_model(const std::vector<LatentSubject>& cohort,
                                            const LatentSubject& reference,
                                            std::vector<std::string>* warnings = nullptr);

CorrelationModel identity_correlation_model(Eigen::Index n_s, Eigen::Index n_z);

/// Latent dimensions first (each row y = L_z x), then slices (z = L_s y).
LatentSubject correlate_sample(const LatentSubject& x, const CorrelationModel& model);

/// Pseudo-pathological sample. With a correlation model the truncated-normal
/// draw is standardised per entry, correlated, mapped back through the
/// cohort mean and deviation, and clamped to the cohort range.
LatentSubject sample_pseudo_pathology(const PathologyStats& stats, std::mt19937_64& rng,
                                      const CorrelationModel* model = nullptr);

std::vector<double> default_pathology_alphas();

std::vector<LatentSubject> pathology_interpolate(const LatentSubject& z_nor, const LatentSubject& z_pseudo,
                                                 const std::vector<double>& alphas = default_pathology_alphas());

/// Decodes every row and stacks the argmax label maps.
LabelVolume decode_subject(Vae& model, const LatentSubject& ls);

}  // namespace cmr::latent
