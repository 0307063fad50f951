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

#include <algorithm>
#include <functional>
#include <string>

#include "cmr/nn/layers.hpp"

namespace cmr::testing {

struct GradCheckResult {
  double worst = 0.0;
  std::string worst_name;
};

/// Compares analytic parameter gradients against central finite differences.
///
/// \p loss evaluates the objective; when its argument is true it must also
/// accumulate gradients into the parameters (grads are zeroed beforehand).
/// The error of each tensor is ||a - n|| / max(||a||, ||n||, floor).
inline GradCheckResult check_parameter_gradients(const nn::ParameterList<double>& params,
                                                 const std::function<double(bool)>& loss,
                                                 double step = 1e-6, double floor = 1e-9) {
  nn::zero_grad(params);
  loss(true);
  GradCheckResult result;
  for (const auto& p : params) {
    if (!p.param->trainable) continue;
    auto& v = p.param->value;
    Eigen::VectorXd numeric(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + step;
      const double up = loss(false);
      v[i] = orig - step;
      const double down = loss(false);
      v[i] = orig;
      numeric[i] = (up - down) / (2.0 * step);
    }
    const double scale = std::max({p.param->grad.norm(), numeric.norm(), floor});
    const double err = (p.param->grad - numeric).norm() / scale;
    if (err > result.worst) {
      result.worst = err;
      result.worst_name = p.name;
    }
  }
  return result;
}

/// Finite-difference gradient of a scalar function with respect to a vector.
inline Eigen::VectorXd numeric_gradient(Eigen::VectorXd& x, const std::function<double()>& f,
                                        double step = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f();
    x[i] = orig - step;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-9) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

}  // namespace cmr::testing
