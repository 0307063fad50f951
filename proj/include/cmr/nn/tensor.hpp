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

#include <Eigen/Core>

#include "cmr/error.hpp"

namespace cmr::nn {

enum class Mode { Train, Eval };

/// Dense NCHW tensor backed by an Eigen vector.
template <typename Scalar>
struct Tensor {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using SampleMap = Eigen::Map<RowMatrix>;
  using ConstSampleMap = Eigen::Map<const RowMatrix>;

  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Vector data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(Vector::Zero(Eigen::Index(n_) * c_ * h_ * w_)) {}

  /// Shape without zero fill, for outputs that are overwritten entirely.
  static Tensor uninitialized(int n_, int c_, int h_, int w_) {
    Tensor t;
    t.n = n_;
    t.c = c_;
    t.h = h_;
    t.w = w_;
    t.data.resize(Eigen::Index(n_) * c_ * h_ * w_);
    return t;
  }

  Eigen::Index size() const { return data.size(); }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }
  Eigen::Index sample_size() const { return Eigen::Index(c) * h * w; }

  Scalar* sample(int i) { return data.data() + i * sample_size(); }
  const Scalar* sample(int i) const { return data.data() + i * sample_size(); }

  /// Channels x pixels view of sample i.
  SampleMap matrix(int i) { return SampleMap(sample(i), c, plane()); }
  ConstSampleMap matrix(int i) const { return ConstSampleMap(sample(i), c, plane()); }

  /// Samples x features view (features = c*h*w).
  SampleMap flat() { return SampleMap(data.data(), n, sample_size()); }
  ConstSampleMap flat() const { return ConstSampleMap(data.data(), n, sample_size()); }

  Scalar& operator()(int i, int ch, int y, int x) {
    return data[((Eigen::Index(i) * c + ch) * h + y) * w + x];
  }
  Scalar operator()(int i, int ch, int y, int x) const {
    return data[((Eigen::Index(i) * c + ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data = data.template cast<Other>();
    return out;
  }
};

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeMismatchError(std::string(what) + ": tensor shapes differ");
}

/// Concatenates two tensors along channels.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeMismatchError("concat_channels: shape mismatch");
  Tensor<Scalar> out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    out.matrix(i).topRows(a.c) = a.matrix(i);
    out.matrix(i).bottomRows(b.c) = b.matrix(i);
  }
  return out;
}

/// Inverse of concat_channels: first \p ca channels go to \p a, the rest to \p b.
template <typename Scalar>
void split_channels(const Tensor<Scalar>& x, int ca, Tensor<Scalar>& a, Tensor<Scalar>& b) {
  a = Tensor<Scalar>(x.n, ca, x.h, x.w);
  b = Tensor<Scalar>(x.n, x.c - ca, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    a.matrix(i) = x.matrix(i).topRows(ca);
    b.matrix(i) = x.matrix(i).bottomRows(x.c - ca);
  }
}

/// Nearest-neighbour resize of a one-hot style map to (h, w).
template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, int h, int w) {
  if (x.h == h && x.w == w) return x;
  Tensor<Scalar> out(x.n, x.c, h, w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int y = 0; y < h; ++y) {
        const int sy = std::min(x.h - 1, static_cast<int>((y + 0.5) * x.h / h));
        for (int xx = 0; xx < w; ++xx) {
          const int sx = std::min(x.w - 1, static_cast<int>((xx + 0.5) * x.w / w));
          out(i, ch, y, xx) = x(i, ch, sy, sx);
        }
      }
  return out;
}

}  // namespace cmr::nn
