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

#include "cmr/latent/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "cmr/error.hpp"

namespace cmr::latent {

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

// Row-conditional affinities with the bandwidth bisected to the target perplexity.
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const Eigen::Index m = d2.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row(m);
    for (int it = 0; it < 100; ++it) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row[j];
        weighted += row[j] * d2(i, j);
      }
      sum = std::max(sum, 1e-300);
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    p.row(i) = row.transpose();
  }
  return p;
}

}  // namespace

Eigen::MatrixXd tsne_2d(const Eigen::MatrixXd& x, const TsneOptions& o) {
  const Eigen::Index m = x.rows();
  if (m < 4) throw InvalidArgumentError("tsne_2d: need at least four points");
  const double perplexity = std::min(o.perplexity, (static_cast<double>(m) - 1.0) / 3.0);

  // Scale-free distances keep the bandwidth search well conditioned.
  Eigen::MatrixXd d2 = squared_distances(x);
  const double mean_d2 = d2.sum() / static_cast<double>(m * (m - 1));
  if (mean_d2 > 0.0) d2 /= mean_d2;
  Eigen::MatrixXd P = conditional_affinities(d2, perplexity);
  P = (P + P.transpose()).eval() / (2.0 * static_cast<double>(m));
  P = P.cwiseMax(1e-12);
  P.diagonal().setZero();

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> g(0.0, 1e-4);
  Eigen::MatrixXd y(m, 2);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = g(rng);
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(m, 2), gains = Eigen::MatrixXd::Ones(m, 2);

  for (int it = 0; it < o.iterations; ++it) {
    const double exag = it < o.exaggeration_iterations ? o.early_exaggeration : 1.0;
    const double momentum = it < o.exaggeration_iterations ? 0.5 : 0.8;
    Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
    num.diagonal().setZero();
    const Eigen::MatrixXd Q = (num / num.sum()).cwiseMax(1e-12);
    const Eigen::MatrixXd W = ((exag * P - Q).array() * num.array()).matrix();
    const Eigen::MatrixXd grad = 4.0 * (W.rowwise().sum().asDiagonal() * y - W * y);
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      double& gain = gains.data()[k];
      gain = (grad.data()[k] > 0) != (update.data()[k] > 0) ? gain + 0.2 : gain * 0.8;
      gain = std::max(gain, 0.01);
    }
    update = momentum * update - o.learning_rate * gains.cwiseProduct(grad);
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  const Eigen::Index m = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != m) throw ShapeMismatchError("silhouette_score: label count mismatch");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw InvalidArgumentError("silhouette_score: need at least two clusters");
  const Eigen::MatrixXd d = squared_distances(points).cwiseSqrt();
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (sizes[own] < 2) continue;
    std::map<int, double> sums;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) sums[labels[static_cast<std::size_t>(j)]] += d(i, j);
    }
    const double a = sums[own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, n] : sizes) {
      if (l != own) b = std::min(b, sums[l] / n);
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(m);
}

LatentEmbedding embed_latents_2d(const Eigen::MatrixXd& codes, const std::vector<int>& labels, const TsneOptions& options) {
  if (codes.rows() < 10) throw InvalidArgumentError("embed_latents_2d: need at least ten codes");
  LatentEmbedding e;
  e.points = tsne_2d(codes, options);
  e.labels = labels;
  e.silhouette = silhouette_score(e.points, labels);
  return e;
}

double nearest_centroid_accuracy(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                                 const Eigen::MatrixXd& test, const std::vector<int>& test_labels) {
  if (static_cast<Eigen::Index>(train_labels.size()) != train.rows() ||
      static_cast<Eigen::Index>(test_labels.size()) != test.rows() || train.cols() != test.cols()) {
    throw ShapeMismatchError("nearest_centroid_accuracy: shape mismatch");
  }
  std::map<int, Eigen::VectorXd> centroid;
  std::map<int, int> count;
  for (Eigen::Index i = 0; i < train.rows(); ++i) {
    const int l = train_labels[static_cast<std::size_t>(i)];
    auto [it, fresh] = centroid.try_emplace(l, Eigen::VectorXd::Zero(train.cols()));
    it->second += train.row(i).transpose();
    ++count[l];
  }
  for (auto& [l, c] : centroid) c /= count[l];
  int correct = 0;
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [l, c] : centroid) {
      const double dd = (test.row(i).transpose() - c).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = l;
      }
    }
    correct += best == test_labels[static_cast<std::size_t>(i)];
  }
  return test.rows() ? static_cast<double>(correct) / static_cast<double>(test.rows()) : 0.0;
}

}  // namespace cmr::latent
