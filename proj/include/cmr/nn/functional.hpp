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
#include <cmath>
#include <span>
#include <type_traits>

#include "cmr/nn/tensor.hpp"

namespace cmr::nn {

/// Channel-wise softmax at every pixel.
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p = logits;
  for (int i = 0; i < p.n; ++i) {
    auto m = p.matrix(i);
    m.rowwise() -= m.colwise().maxCoeff();
    m = m.array().exp().matrix();
    m.array().rowwise() /= m.colwise().sum().array();
  }
  return p;
}

/// Backpropagates a gradient on softmax probabilities to the logits.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs) {
  Tensor<Scalar> dl = dprobs;
  for (int i = 0; i < probs.n; ++i) {
    const auto p = probs.matrix(i);
    const auto g = dprobs.matrix(i);
    const auto dot = (p.array() * g.array()).colwise().sum();
    dl.matrix(i) = (p.array() * (g.array().rowwise() - dot)).matrix();
  }
  return dl;
}

enum class Reduction {
  Mean,  // mean over every pixel of the batch
  Sum,   // sum over pixels of each sample, mean over samples
};

/// Class-weighted pixel cross-entropy on softmax probabilities.
///
/// \p target is one-hot with the same shape as \p probs. Each pixel
/// contributes -w[y] * log p[y]. Returns the loss and writes
/// dL/dlogits into \p dlogits (softmax folded in).
template <typename Scalar>
double weighted_cross_entropy(const Tensor<Scalar>& probs, const Tensor<Scalar>& target,
                              std::span<const double> class_weights, Reduction reduction,
                              std::type_identity_t<Tensor<Scalar>>* dlogits) {
  require_same_shape(probs, target, "weighted_cross_entropy");
  if (static_cast<int>(class_weights.size()) != probs.c) {
    throw ShapeMismatchError("weighted_cross_entropy: one weight per class required");
  }
  const double denom = reduction == Reduction::Mean ? double(probs.n) * probs.plane() : double(probs.n);
  constexpr double kFloor = 1e-12;
  double loss = 0.0;
  if (dlogits) *dlogits = Tensor<Scalar>(probs.n, probs.c, probs.h, probs.w);
  for (int i = 0; i < probs.n; ++i) {
    const auto p = probs.matrix(i);
    const auto y = target.matrix(i);
    for (Eigen::Index px = 0; px < probs.plane(); ++px) {
      double w = 0.0;
      for (int ch = 0; ch < probs.c; ++ch) w += class_weights[ch] * double(y(ch, px));
      for (int ch = 0; ch < probs.c; ++ch) {
        if (y(ch, px) != Scalar(0)) loss -= class_weights[ch] * double(y(ch, px)) * std::log(std::max(double(p(ch, px)), kFloor));
      }
      if (dlogits) {
        auto d = dlogits->matrix(i);
        for (int ch = 0; ch < probs.c; ++ch) d(ch, px) = Scalar(w * double(p(ch, px)) - class_weights[ch] * double(y(ch, px))) / Scalar(denom);
      }
    }
  }
  return loss / denom;
}

/// Gaussian KL divergence to N(0, I): -1/2 sum_j (1 + lv - mu^2 - exp(lv)),
/// averaged over rows (samples). Gradients written when pointers are given.
template <typename Derived>
double kl_divergence(const Eigen::MatrixBase<Derived>& mu, const Eigen::MatrixBase<Derived>& log_var,
                     typename Derived::PlainObject* dmu = nullptr, typename Derived::PlainObject* dlog_var = nullptr) {
  using S = typename Derived::Scalar;
  const double n = double(mu.rows());
  const auto e = log_var.array().exp();
  const double kld = -0.5 * (S(1) + log_var.array() - mu.array().square() - e).template cast<double>().sum() / n;
  if (dmu) *dmu = (mu.array() / S(n)).matrix();
  if (dlog_var) *dlog_var = (S(-0.5) * (S(1) - e) / S(n)).matrix();
  return kld;
}

/// Soft Dice loss 1 - mean_c (2 sum p y + s) / (sum p + sum y + s) over the
/// listed classes, with sums over the whole batch. Writes dL/dprobs.
template <typename Scalar>
double soft_dice_loss(const Tensor<Scalar>& probs, const Tensor<Scalar>& target, std::span<const int> classes,
                      std::type_identity_t<Tensor<Scalar>>* dprobs, double smooth = 1.0) {
  require_same_shape(probs, target, "soft_dice_loss");
  if (dprobs) *dprobs = Tensor<Scalar>(probs.n, probs.c, probs.h, probs.w);
  double total = 0.0;
  const double k = double(classes.size());
  for (int ch : classes) {
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (int i = 0; i < probs.n; ++i) {
      const auto p = probs.matrix(i).row(ch);
      const auto y = target.matrix(i).row(ch);
      inter += double(p.dot(y));
      sp += double(p.sum());
      sy += double(y.sum());
    }
    const double num = 2.0 * inter + smooth;
    const double den = sp + sy + smooth;
    total += num / den;
    if (dprobs) {
      // d(num/den)/dp = (2y*den - num) / den^2 ; loss = 1 - mean
      for (int i = 0; i < probs.n; ++i) {
        auto d = dprobs->matrix(i).row(ch);
        const auto y = target.matrix(i).row(ch);
        d = ((-(2.0 * y.template cast<double>().array() * den - num) / (den * den * k)).template cast<Scalar>()).matrix();
      }
    }
  }
  return 1.0 - total / k;
}

}  // namespace cmr::nn
