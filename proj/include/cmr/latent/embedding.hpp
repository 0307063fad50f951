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
#include <vector>

#include <Eigen/Dense>

namespace cmr::latent {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
};

/// Exact t-SNE of the rows of \p x into two dimensions.
Eigen::MatrixXd tsne_2d(const Eigen::MatrixXd& x, const TsneOptions& options = {});

/// Mean silhouette coefficient of a labelled point set (Euclidean).
/// Points in singleton clusters contribute 0.
double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels);

struct LatentEmbedding {
  Eigen::MatrixXd points;  // m x 2
  std::vector<int> labels;
  double silhouette = 0.0;
};

LatentEmbedding embed_latents_2d(const Eigen::MatrixXd& codes, const std::vector<int>& labels,
                                 const TsneOptions& options = {});

/// Fraction of test rows whose nearest training-class centroid carries
/// their own label.
double nearest_centroid_accuracy(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                                 const Eigen::MatrixXd& test, const std::vector<int>& test_labels);

}  // namespace cmr::latent
