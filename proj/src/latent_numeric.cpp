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

#include "cmr/latent/numeric.hpp"

#include <cstddef>
#include <limits>

namespace cmr::latent {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

namespace {

// Horner evaluation, coefficients from the highest power down.
template <std::size_t N>
double poly(const double (&c)[N], double x) {
  double v = 0.0;
  for (double k : c) v = v * x + k;
  return v;
}

constexpr double kCentralNum[] = {2509.0809287301226727, 33430.575583588128105, 67265.770927008700853,
                                  45921.953931549871457, 13731.693765509461125, 1971.5909503065514427,
                                  133.14166789178437745, 3.387132872796366608};
constexpr double kCentralDen[] = {5226.495278852545925, 28729.085735721942674, 39307.89580009271061,
                                  21213.794301586595867, 5394.1960214247511077, 687.1870074920579083,
                                  42.313330701600911252, 1.0};
constexpr double kNearNum[] = {7.7454501427834140764e-4, 0.0227238449892691845833, 0.24178072517745061177,
                               1.27045825245236838258,   3.64784832476320460504,   5.7694972214606914055,
                               4.6303378461565452959,    1.42343711074968357734};
constexpr double kNearDen[] = {1.05075007164441684324e-9, 5.475938084995344946e-4, 0.0151986665636164571966,
                               0.14810397642748007459,    0.68976733498510000455,  1.6763848301838038494,
                               2.05319162663775882187,    1.0};
constexpr double kFarNum[] = {2.01033439929228813265e-7, 2.71155556874348757815e-5, 0.0012426609473880784386,
                              0.026532189526576123093,   0.29656057182850489123,    1.7848265399172913358,
                              5.4637849111641143699,     6.6579046435011037772};
constexpr double kFarDen[] = {2.04426310338993978564e-15, 1.4215117583164458887e-7, 1.8463183175100546818e-5,
                              7.868691311456132591e-4,    0.0148753612908506148525, 0.13692988092273580531,
                              0.59983220655588793769,     1.0};

}  // namespace

// Wichura, Algorithm AS 241 (PPND16).
double normal_quantile(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) throw InvalidArgumentError("normal_quantile: p outside [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(kCentralNum, r) / poly(kCentralDen, r);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = poly(kNearNum, r) / poly(kNearDen, r);
  } else {
    r -= 5.0;
    value = poly(kFarNum, r) / poly(kFarDen, r);
  }
  return q < 0.0 ? -value : value;
}

}  // namespace cmr::latent
