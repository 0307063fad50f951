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

#include <cmath>
#include <vector>

#include "cmr/nn/layers.hpp"

namespace cmr::nn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 penalty folded into the gradient
};

/// Adaptive-moment gradient descent over the trainable entries of a parameter list.
template <typename Scalar>
class Adam {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Adam(ParameterList<Scalar> params, AdamOptions options) : options_(options) {
    for (auto& p : params) {
      if (!p.param->trainable) continue;
      params_.push_back(p.param);
      m_.push_back(Vector::Zero(p.param->value.size()));
      v_.push_back(Vector::Zero(p.param->value.size()));
    }
  }

  void step() {
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    const Scalar step = static_cast<Scalar>(options_.lr * std::sqrt(c2) / c1);
    const Scalar eps_hat = static_cast<Scalar>(options_.eps * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      Vector g = p.grad;
      if (options_.weight_decay != 0.0) g += Scalar(options_.weight_decay) * p.value;
      m_[i] = Scalar(b1) * m_[i] + Scalar(1 - b1) * g;
      v_[i] = Scalar(b2) * v_[i] + Scalar(1 - b2) * g.cwiseProduct(g);
      p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps_hat);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  long steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<Parameter<Scalar>*> params_;
  std::vector<Vector> m_, v_;
  long t_ = 0;
};

}  // namespace cmr::nn
