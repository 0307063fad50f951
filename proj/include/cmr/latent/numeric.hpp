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
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "cmr/error.hpp"

namespace cmr::latent {

// ---------------------------------------------------------------------------
// Kendall rank correlation

namespace detail {

// Merge sort of y counting exchanges (discordant pairs once x ties are removed).
template <typename Scalar>
long long count_swaps(std::vector<Scalar>& y, std::vector<Scalar>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long swaps = count_swaps(y, buf, lo, mid) + count_swaps(y, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      swaps += static_cast<long long>(mid - i);
      buf[k++] = y[j++];
    } else {
      buf[k++] = y[i++];
    }
  }
  while (i < mid) buf[k++] = y[i++];
  while (j < hi) buf[k++] = y[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            y.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

// Sum of t(t-1)/2 over runs of equal values in a sorted range.
template <typename It>
long long tied_pairs(It first, It last) {
  long long total = 0;
  while (first != last) {
    It run = first;
    long long t = 0;
    while (run != last && *run == *first) {
      ++run;
      ++t;
    }
    total += t * (t - 1) / 2;
    first = run;
  }
  return total;
}

}  // namespace detail

/// Kendall tau-b of two equally long samples (Knight's O(m log m) algorithm).
/// Returns NaN when either sample is constant.
template <typename DerivedX, typename DerivedY>
double kendall_tau_b(const Eigen::DenseBase<DerivedX>& x, const Eigen::DenseBase<DerivedY>& y) {
  using Scalar = typename DerivedX::Scalar;
  const auto m = static_cast<std::size_t>(x.size());
  if (static_cast<Eigen::Index>(m) != y.size()) throw ShapeMismatchError("kendall_tau_b: length mismatch");
  if (m < 2) throw InvalidArgumentError("kendall_tau_b: need at least two observations");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x(a) < x(b) || (x(a) == x(b) && y(a) < y(b));
  });
  std::vector<Scalar> xs(m), ys(m);
  for (std::size_t i = 0; i < m; ++i) {
    xs[i] = x(order[i]);
    ys[i] = static_cast<Scalar>(y(order[i]));
  }

  const long long n0 = static_cast<long long>(m) * (static_cast<long long>(m) - 1) / 2;
  const long long n1 = detail::tied_pairs(xs.begin(), xs.end());
  long long n3 = 0;
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    long long t = 0;
    while (j < m && xs[j] == xs[i] && ys[j] == ys[i]) {
      ++j;
      ++t;
    }
    n3 += t * (t - 1) / 2;
    i = j;
  }
  std::vector<Scalar> buf(m);
  const long long swaps = detail::count_swaps(ys, buf, 0, m);
  const long long n2 = detail::tied_pairs(ys.begin(), ys.end());

  const double denom = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps) / denom;
}

/// Pairwise Kendall tau-b between the columns of an m x d sample matrix.
/// A constant column has undefined tau; its off-diagonal entries are set to
/// 0 and its index is appended to \p constant_columns.
template <typename Derived>
Eigen::MatrixXd kendall_tau_matrix(const Eigen::MatrixBase<Derived>& samples,
                                   std::vector<Eigen::Index>* constant_columns = nullptr) {
  const Eigen::Index d = samples.cols();
  if (samples.rows() < 2) throw InvalidArgumentError("kendall_tau_matrix: need at least two samples");
  const Eigen::MatrixXd s = samples.template cast<double>();
  std::vector<bool> constant(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    constant[static_cast<std::size_t>(j)] = (s.col(j).array() == s(0, j)).all();
    if (constant[static_cast<std::size_t>(j)] && constant_columns) constant_columns->push_back(j);
  }
  Eigen::MatrixXd tau = Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index k = j + 1; k < d; ++k) {
      double t = 0.0;
      if (!constant[static_cast<std::size_t>(j)] && !constant[static_cast<std::size_t>(k)]) {
        t = kendall_tau_b(s.col(j), s.col(k));
      }
      tau(j, k) = tau(k, j) = t;
    }
  }
  return tau;
}

// ---------------------------------------------------------------------------
// Cholesky with diagonal jitter

template <typename Scalar>
struct CholeskyFactor {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> L;
  Scalar jitter = 0;  // epsilon added to the diagonal (0 when C was PD)
};

/// Lower Cholesky factor of a symmetric matrix. When C is not positive
/// definite, eps * I is added with eps = 1e-10, 1e-9, ..., 1e-4.
template <typename Derived>
CholeskyFactor<typename Derived::Scalar> cholesky(const Eigen::MatrixBase<Derived>& C) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (C.rows() != C.cols()) throw ShapeMismatchError("cholesky: matrix is not square");
  const Matrix A = C;
  if (!A.allFinite()) throw InvalidArgumentError("cholesky: non-finite entries");
  const Scalar scale = std::max(Scalar(1), A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale) {
    throw InvalidArgumentError("cholesky: matrix is not symmetric");
  }
  Scalar eps = 0;
  for (int attempt = 0; attempt <= 7; ++attempt) {
    Matrix J = A;
    J.diagonal().array() += eps;
    Eigen::LLT<Matrix> llt(J);
    if (llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > Scalar(0)).all()) {
      return {llt.matrixL().toDenseMatrix(), eps};
    }
    eps = attempt == 0 ? Scalar(1e-10) : eps * Scalar(10);
  }
  throw NotPositiveDefiniteError("cholesky: matrix is not positive definite even with 1e-4 diagonal jitter");
}

// ---------------------------------------------------------------------------
// Cubic spline through uniformly spaced knots

enum class SplineBoundary {
  NotAKnot,  // third derivative continuous at the second and penultimate knots
  Natural,   // zero second derivative at both ends
};

/// Interpolates every column of \p knots (row i at t = i / (n - 1)) and
/// evaluates the spline at \p n_out uniform positions on [0, 1]. Rows that
/// fall on a knot are copied unchanged.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> cubic_spline_resample(
    const Eigen::MatrixBase<Derived>& knots, Eigen::Index n_out, SplineBoundary boundary = SplineBoundary::NotAKnot) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = knots.rows();
  if (n < 2) throw InvalidArgumentError("cubic_spline_resample: need at least two knots");
  if (n_out < 2) throw InvalidArgumentError("cubic_spline_resample: need at least two output rows");
  const Matrix y = knots;
  const Scalar h = Scalar(1) / Scalar(n - 1);

  // Second derivatives at the knots.
  Matrix M = Matrix::Zero(n, y.cols());
  if (n >= 3) {
    Matrix A = Matrix::Zero(n, n);
    Matrix rhs = Matrix::Zero(n, y.cols());
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
      A(i, i - 1) = 1;
      A(i, i) = 4;
      A(i, i + 1) = 1;
      rhs.row(i) = (y.row(i + 1) - 2 * y.row(i) + y.row(i - 1)) * (Scalar(6) / (h * h));
    }
    if (boundary == SplineBoundary::Natural) {
      A(0, 0) = 1;
      A(n - 1, n - 1) = 1;
    } else if (n == 3) {
      // A single parabola: constant second derivative.
      A(0, 0) = 1;
      A(0, 1) = -1;
      A(2, 1) = 1;
      A(2, 2) = -1;
    } else {
      A(0, 0) = 1;
      A(0, 1) = -2;
      A(0, 2) = 1;
      A(n - 1, n - 3) = 1;
      A(n - 1, n - 2) = -2;
      A(n - 1, n - 1) = 1;
    }
    M = A.partialPivLu().solve(rhs);
  }

  Matrix out(n_out, y.cols());
  for (Eigen::Index j = 0; j < n_out; ++j) {
    // Exact knot positions are detected in integer arithmetic.
    if ((j * (n - 1)) % (n_out - 1) == 0) {
      out.row(j) = y.row(j * (n - 1) / (n_out - 1));
      continue;
    }
    const Scalar t = Scalar(j) / Scalar(n_out - 1);
    const Eigen::Index k = std::min<Eigen::Index>(static_cast<Eigen::Index>(t / h), n - 2);
    const Scalar b = (t - Scalar(k) * h) / h;
    const Scalar a = Scalar(1) - b;
    out.row(j) = a * y.row(k) + b * y.row(k + 1) +
                 ((a * a * a - a) * M.row(k) + (b * b * b - b) * M.row(k + 1)) * (h * h / Scalar(6));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normal distribution helpers and truncated sampling

/// Standard normal CDF.
double normal_cdf(double x);
/// Standard normal upper tail 1 - Phi(x), accurate for large x.
double normal_sf(double x);
/// Inverse standard normal CDF (Wichura's AS241, ~1e-16 relative accuracy).
double normal_quantile(double p);

/// One draw from Normal(mu, sigma) truncated to [lo, hi].
///
/// Rejection sampling while the interval holds at least 1% of the mass;
/// otherwise inverse-CDF sampling inside the interval. sigma == 0 or a
/// degenerate interval returns mu clamped to [lo, hi].
template <typename Rng>
double sample_truncated_normal(double mu, double sigma, double lo, double hi, Rng& rng) {
  if (lo > hi) throw InvalidArgumentError("sample_truncated_normal: lower bound above upper bound");
  if (!(sigma > 0.0) || lo == hi) return std::clamp(mu, lo, hi);
  const double a = (lo - mu) / sigma, b = (hi - mu) / sigma;
  // Work in the lower tail for precision: reflect intervals lying right of 0.
  const bool flip = a > 0.0;
  const double fa = flip ? -b : a, fb = flip ? -a : b;
  const double pa = normal_cdf(fa), pb = normal_cdf(fb);
  const double mass = pb - pa;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (mass >= 0.01) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (;;) {
      const double e = gauss(rng);
      if (e >= a && e <= b) return mu + sigma * e;
    }
  }
  double e = normal_quantile(pa + unif(rng) * mass);
  e = std::clamp(e, fa, fb);
  if (flip) e = -e;
  return std::clamp(mu + sigma * e, lo, hi);
}

}  // namespace cmr::latent
