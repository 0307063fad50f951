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

#include "cmr/latent/latent.hpp"

#include <algorithm>
#include <cstring>

#include "cmr/preprocess.hpp"

namespace cmr::latent {

LatentSubject encode_subject(Vae& model, const Subject& subject) {
  const int size = model.config().input_size;
  if (subject.labels.rows() != size || subject.labels.cols() != size) {
    throw ShapeMismatchError("encode_subject: subject " + subject.meta.subject_id + " is " +
                             std::to_string(subject.labels.rows()) + "x" + std::to_string(subject.labels.cols()) +
                             "; preprocess it to " + std::to_string(size) + "x" + std::to_string(size) + " first");
  }
  std::vector<OneHotLabelMap> maps;
  for (int s = 0; s < subject.labels.slices(); ++s) maps.push_back(one_hot(subject.labels, s));
  return {encode_mu(model, maps), subject.meta.subject_id};
}

LatentSubject intra_subject_interpolate(const LatentSubject& ls, int n_target, SplineBoundary boundary) {
  if (ls.n_s() < 2) throw InvalidArgumentError("intra_subject_interpolate: need at least two slices");
  if (n_target < ls.n_s()) {
    throw InvalidArgumentError("intra_subject_interpolate: n_target below the slice count (only upsampling is supported)");
  }
  return {cubic_spline_resample(ls.codes, n_target, boundary), ls.subject_id};
}

std::vector<LatentSubject> inter_subject_interpolate(const LatentSubject& a, const LatentSubject& b,
                                                     const std::vector<double>& alphas) {
  if (a.codes.rows() != b.codes.rows() || a.codes.cols() != b.codes.cols()) {
    throw ShapeMismatchError("inter_subject_interpolate: subjects differ in shape");
  }
  std::vector<LatentSubject> out;
  for (double alpha : alphas) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgumentError("inter_subject_interpolate: alpha outside [0, 1]");
    LatentSubject s;
    if (alpha == 0.0) {
      s.codes = a.codes;
    } else if (alpha == 1.0) {
      s.codes = b.codes;
    } else {
      s.codes = (1.0 - alpha) * a.codes + alpha * b.codes;
    }
    s.subject_id = a.subject_id + "_to_" + b.subject_id + "_a" + std::to_string(alpha).substr(0, 4);
    out.push_back(std::move(s));
  }
  return out;
}

PathologyStats estimate_pathology_stats(const std::vector<LatentSubject>& cohort, Pathology tag) {
  if (cohort.empty()) throw InvalidArgumentError("estimate_pathology_stats: empty cohort");
  const auto rows = cohort[0].n_s(), cols = cohort[0].n_z();
  for (const auto& s : cohort) {
    if (s.n_s() != rows || s.n_z() != cols) {
      throw ShapeMismatchError("estimate_pathology_stats: subject " + s.subject_id + " has a different shape");
    }
  }
  PathologyStats st;
  st.pathology = tag;
  st.n_subjects = static_cast<int>(cohort.size());
  st.mu = Eigen::MatrixXd::Zero(rows, cols);
  st.min = cohort[0].codes;
  st.max = cohort[0].codes;
  for (const auto& s : cohort) {
    st.mu += s.codes;
    st.min = st.min.cwiseMin(s.codes);
    st.max = st.max.cwiseMax(s.codes);
  }
  st.mu /= static_cast<double>(cohort.size());
  Eigen::MatrixXd var = Eigen::MatrixXd::Zero(rows, cols);
  for (const auto& s : cohort) var += (s.codes - st.mu).cwiseAbs2();
  st.sigma = (var / static_cast<double>(cohort.size())).cwiseSqrt();
  // Guard the ordering against round-off in the mean.
  st.mu = st.mu.cwiseMax(st.min).cwiseMin(st.max);
  return st;
}

LatentSubject sample_truncated_normal(const PathologyStats& stats, std::mt19937_64& rng) {
  LatentSubject out{Eigen::MatrixXd(stats.mu.rows(), stats.mu.cols()), "p" + std::string(to_string(stats.pathology))};
  for (Eigen::Index j = 0; j < stats.mu.cols(); ++j) {
    for (Eigen::Index i = 0; i < stats.mu.rows(); ++i) {
      out.codes(i, j) = latent::sample_truncated_normal(stats.mu(i, j), stats.sigma(i, j), stats.min(i, j),
                                                        stats.max(i, j), rng);
    }
  }
  return out;
}

CorrelationModel estimate_correlation_model(const std::vector<LatentSubject>& cohort, const LatentSubject& reference,
                                            std::vector<std::string>* warnings) {
  if (cohort.empty()) throw InvalidArgumentError("estimate_correlation_model: empty cohort");
  const auto n_z = reference.n_z();
  Eigen::Index total = 0;
  for (const auto& s : cohort) {
    if (s.n_z() != n_z) throw ShapeMismatchError("estimate_correlation_model: latent size mismatch");
    total += s.n_s();
  }
  Eigen::MatrixXd stacked(total, n_z);
  Eigen::Index row = 0;
  for (const auto& s : cohort) {
    stacked.middleRows(row, s.n_s()) = s.codes;
    row += s.n_s();
  }
  std::vector<Eigen::Index> const_z, const_s;
  CorrelationModel m;
  m.corr_z = kendall_tau_matrix(stacked, &const_z);
  m.corr_s = kendall_tau_matrix(reference.codes.transpose(), &const_s);
  if (warnings) {
    for (auto j : const_z) warnings->push_back("latent dimension " + std::to_string(j) + " is constant; tau set to 0");
    for (auto j : const_s) warnings->push_back("slice " + std::to_string(j) + " is constant; tau set to 0");
  }
  auto fz = cholesky(m.corr_z);
  auto fs = cholesky(m.corr_s);
  m.chol_z = std::move(fz.L);
  m.chol_s = std::move(fs.L);
  m.jitter_z = fz.jitter;
  m.jitter_s = fs.jitter;
  return m;
}

CorrelationModel identity_correlation_model(Eigen::Index n_s, Eigen::Index n_z) {
  CorrelationModel m;
  m.corr_z = m.chol_z = Eigen::MatrixXd::Identity(n_z, n_z);
  m.corr_s = m.chol_s = Eigen::MatrixXd::Identity(n_s, n_s);
  return m;
}

LatentSubject correlate_sample(const LatentSubject& x, const CorrelationModel& model) {
  if (model.chol_z.rows() != x.n_z() || model.chol_s.rows() != x.n_s()) {
    throw ShapeMismatchError("correlate_sample: factor sizes do not match the sample");
  }
  const Eigen::MatrixXd y = x.codes * model.chol_z.transpose();
  return {model.chol_s * y, x.subject_id};
}

LatentSubject sample_pseudo_pathology(const PathologyStats& stats, std::mt19937_64& rng,
                                      const CorrelationModel* model) {
  LatentSubject x = sample_truncated_normal(stats, rng);
  if (!model) return x;
  const Eigen::ArrayXXd safe = (stats.sigma.array() > 0.0).select(stats.sigma.array(), 1.0);
  LatentSubject e{((x.codes - stats.mu).array() / safe).matrix(), x.subject_id};
  e.codes = (stats.sigma.array() > 0.0).select(e.codes.array(), 0.0).matrix();
  const LatentSubject c = correlate_sample(e, *model);
  x.codes = (stats.mu.array() + stats.sigma.array() * c.codes.array()).matrix();
  x.codes = x.codes.cwiseMax(stats.min).cwiseMin(stats.max);
  return x;
}

std::vector<double> default_pathology_alphas() { return {0.2, 0.4, 0.6, 0.8, 1.0}; }

std::vector<LatentSubject> pathology_interpolate(const LatentSubject& z_nor, const LatentSubject& z_pseudo,
                                                 const std::vector<double>& alphas) {
  return inter_subject_interpolate(z_nor, z_pseudo, alphas);
}

LabelVolume decode_subject(Vae& model, const LatentSubject& ls) {
  if (!ls.codes.allFinite()) throw InvalidArgumentError("decode_subject: non-finite latent codes");
  const auto maps = decode_batch(model, ls.codes);
  const int size = model.config().input_size;
  LabelVolume vol(static_cast<int>(maps.size()), size, size);
  for (std::size_t s = 0; s < maps.size(); ++s) {
    const auto lab = argmax(maps[s]);
    std::copy(lab.begin(), lab.end(), vol.slice(static_cast<int>(s)).begin());
  }
  return vol;
}

}  // namespace cmr::latent
