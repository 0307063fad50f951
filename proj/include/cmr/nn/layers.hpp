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
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cmr/nn/tensor.hpp"

namespace cmr::nn {

template <typename Scalar>
struct Parameter {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector value;
  Vector grad;
  bool trainable = true;

  void resize(Eigen::Index n) {
    value = Vector::Zero(n);
    grad = Vector::Zero(n);
  }
};

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Parameter<Scalar>* param;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

template <typename Scalar>
void zero_grad(const ParameterList<Scalar>& params) {
  for (auto& p : params) p.param->grad.setZero();
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
template <typename Scalar>
void init_uniform(Parameter<Scalar>& p, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<Scalar>(u(rng));
}

/// A differentiable layer with cached forward state.
///
/// backward() must follow the matching forward() and accumulates into the
/// parameter gradients; it returns the gradient with respect to the input.
template <typename Scalar>
class Layer {
 public:
  using T = Tensor<Scalar>;

  virtual ~Layer() = default;
  virtual T forward(const T& x, Mode mode) = 0;
  virtual T backward(const T& dy) = 0;
  virtual void collect(const std::string& /*prefix*/, ParameterList<Scalar>& /*out*/) {}
  virtual std::string describe() const = 0;
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* in, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            Scalar* col) {
  const Eigen::Index hw = Eigen::Index(Ho) * Wo;
  for (int ch = 0; ch < C; ++ch) {
    const Scalar* plane = in + Eigen::Index(ch) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col + ((Eigen::Index(ch) * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* dst = row + Eigen::Index(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, Scalar(0));
            continue;
          }
          const Scalar* src = plane + Eigen::Index(iy) * W;
          if (stride == 1) {
            // Valid output columns satisfy 0 <= ox - pad + kx < W.
            const int lo = std::clamp(pad - kx, 0, Wo), hi = std::clamp(W + pad - kx, lo, Wo);
            std::fill(dst, dst + lo, Scalar(0));
            std::copy(src + lo - pad + kx, src + hi - pad + kx, dst + lo);
            std::fill(dst + hi, dst + Wo, Scalar(0));
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < W) ? src[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            Scalar* out) {
  const Eigen::Index hw = Eigen::Index(Ho) * Wo;
  for (int ch = 0; ch < C; ++ch) {
    Scalar* plane = out + Eigen::Index(ch) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col + ((Eigen::Index(ch) * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          Scalar* dst = plane + Eigen::Index(iy) * W;
          const Scalar* src = row + Eigen::Index(oy) * Wo;
          if (stride == 1) {
            const int lo = std::clamp(pad - kx, 0, Wo), hi = std::clamp(W + pad - kx, lo, Wo);
            Scalar* d = dst - pad + kx;
            for (int ox = lo; ox < hi; ++ox) d[ox] += src[ox];
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < W) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  using RowMatrix = typename T::RowMatrix;

  Conv2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng, bool bias = true)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
    const int fan_in = in * kernel * kernel;
    weight_.resize(Eigen::Index(out) * fan_in);
    init_uniform(weight_, fan_in, rng);
    if (has_bias_) {
      bias_.resize(out);
      init_uniform(bias_, fan_in, rng);
    }
  }

  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

  T forward(const T& x, Mode) override {
    if (x.c != in_) throw ShapeMismatchError("Conv2d: expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.c));
    input_ = x;
    const int Ho = out_size(x.h), Wo = out_size(x.w);
    T y = T::uninitialized(x.n, out_, Ho, Wo);
    const auto W = weights();
    for (int i = 0; i < x.n; ++i) {
      auto Y = y.matrix(i);
      if (pointwise()) {
        Y.noalias() = W * x.matrix(i);
      } else {
        fill_col(x, i, Ho, Wo);
        Y.noalias() = W * col_;
      }
      if (has_bias_) Y.colwise() += bias_.value;
    }
    return y;
  }

  T backward(const T& dy) override {
    const T& x = input_;
    T dx(x.n, x.c, x.h, x.w);
    const auto W = weights();
    auto dW = typename T::SampleMap(weight_.grad.data(), out_, Eigen::Index(in_) * k_ * k_);
    for (int i = 0; i < x.n; ++i) {
      const auto dY = dy.matrix(i);
      if (has_bias_) bias_.grad += dY.rowwise().sum();
      if (pointwise()) {
        dW.noalias() += dY * x.matrix(i).transpose();
        dx.matrix(i).noalias() = W.transpose() * dY;
      } else {
        fill_col(x, i, dy.h, dy.w);
        dW.noalias() += dY * col_.transpose();
        col_.noalias() = W.transpose() * dY;
        detail::col2im(col_.data(), x.c, x.h, x.w, k_, stride_, pad_, dy.h, dy.w, dx.sample(i));
      }
    }
    return dx;
  }

  void collect(const std::string& prefix, ParameterList<Scalar>& out) override {
    out.push_back({prefix + "weight", &weight_});
    if (has_bias_) out.push_back({prefix + "bias", &bias_});
  }

  std::string describe() const override {
    std::ostringstream os;
    os << "Conv2d(" << in_ << "->" << out_ << ",k" << k_ << ",s" << stride_ << ",p" << pad_ << ")";
    return os.str();
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int stride() const { return stride_; }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  typename T::ConstSampleMap weights() const {
    return typename T::ConstSampleMap(weight_.value.data(), out_, Eigen::Index(in_) * k_ * k_);
  }

  void fill_col(const T& x, int i, int Ho, int Wo) {
    col_.resize(Eigen::Index(in_) * k_ * k_, Eigen::Index(Ho) * Wo);
    detail::im2col(x.sample(i), x.c, x.h, x.w, k_, stride_, pad_, Ho, Wo, col_.data());
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Parameter<Scalar> weight_, bias_;
  T input_;
  RowMatrix col_;
};

/// Per-channel batch normalisation over (N, H, W).
template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  using Vector = typename T::Vector;

  explicit BatchNorm2d(int channels, bool affine = true, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), affine_(affine), momentum_(momentum), eps_(eps) {
    if (affine_) {
      gamma_.resize(c_);
      gamma_.value.setOnes();
      beta_.resize(c_);
    }
    running_mean_.resize(c_);
    running_var_.resize(c_);
    running_var_.value.setOnes();
    running_mean_.trainable = false;
    running_var_.trainable = false;
  }

  T forward(const T& x, Mode mode) override {
    if (x.c != c_) throw ShapeMismatchError("BatchNorm2d: channel mismatch");
    mode_ = mode;
    const double count = double(x.n) * x.plane();
    Vector mean(c_), var(c_);
    if (mode == Mode::Train) {
      mean.setZero();
      var.setZero();
      for (int i = 0; i < x.n; ++i) mean += x.matrix(i).rowwise().sum();
      mean /= Scalar(count);
      for (int i = 0; i < x.n; ++i)
        var += (x.matrix(i).colwise() - mean).array().square().matrix().rowwise().sum();
      var /= Scalar(count);
      const Scalar m = Scalar(momentum_);
      const Scalar unbias = count > 1 ? Scalar(count / (count - 1)) : Scalar(1);
      running_mean_.value = (1 - m) * running_mean_.value + m * mean;
      running_var_.value = (1 - m) * running_var_.value + m * unbias * var;
    } else {
      mean = running_mean_.value;
      var = running_var_.value;
    }
    inv_std_ = (var.array() + Scalar(eps_)).rsqrt().matrix();
    xhat_ = T::uninitialized(x.n, x.c, x.h, x.w);
    T y = T::uninitialized(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i) {
      auto xh = xhat_.matrix(i);
      xh = inv_std_.asDiagonal() * (x.matrix(i).colwise() - mean);
      if (affine_) {
        y.matrix(i) = (gamma_.value.asDiagonal() * xh).colwise() + beta_.value;
      } else {
        y.matrix(i) = xh;
      }
    }
    return y;
  }

  T backward(const T& dy) override {
    const T& xh = xhat_;
    T dx = T::uninitialized(dy.n, dy.c, dy.h, dy.w);
    const Scalar count = Scalar(double(dy.n) * dy.plane());
    Vector sum_dy = Vector::Zero(c_), sum_dy_xh = Vector::Zero(c_);
    for (int i = 0; i < dy.n; ++i) {
      sum_dy += dy.matrix(i).rowwise().sum();
      sum_dy_xh += (dy.matrix(i).array() * xh.matrix(i).array()).matrix().rowwise().sum();
    }
    if (affine_) {
      gamma_.grad += sum_dy_xh;
      beta_.grad += sum_dy;
    }
    const Vector g = affine_ ? gamma_.value : Vector::Ones(c_);
    if (mode_ == Mode::Eval) {
      const Vector scale = (g.array() * inv_std_.array()).matrix();
      for (int i = 0; i < dy.n; ++i) dx.matrix(i) = scale.asDiagonal() * dy.matrix(i);
      return dx;
    }
    // dx = g*inv_std/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
    const Vector scale = (g.array() * inv_std_.array() / count).matrix();
    for (int i = 0; i < dy.n; ++i) {
      auto d = dx.matrix(i);
      d = (dy.matrix(i) * count).colwise() - sum_dy;
      d -= sum_dy_xh.asDiagonal() * xh.matrix(i);
      d = scale.asDiagonal() * d;
    }
    return dx;
  }

  void collect(const std::string& prefix, ParameterList<Scalar>& out) override {
    if (affine_) {
      out.push_back({prefix + "weight", &gamma_});
      out.push_back({prefix + "bias", &beta_});
    }
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
  }

  std::string describe() const override {
    return "BatchNorm2d(" + std::to_string(c_) + (affine_ ? ")" : ",no-affine)");
  }

 private:
  int c_;
  bool affine_;
  double momentum_, eps_;
  Parameter<Scalar> gamma_, beta_, running_mean_, running_var_;
  Mode mode_ = Mode::Train;
  Vector inv_std_;
  T xhat_;
};

template <typename Scalar>
class LeakyReLU final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  explicit LeakyReLU(double slope = 0.2) : slope_(static_cast<Scalar>(slope)) {}

  T forward(const T& x, Mode) override {
    input_ = x;
    T y = T::uninitialized(x.n, x.c, x.h, x.w);
    y.data = x.data.array().max(Scalar(0)) + slope_ * x.data.array().min(Scalar(0));
    return y;
  }
  T backward(const T& dy) override {
    T dx = T::uninitialized(dy.n, dy.c, dy.h, dy.w);
    dx.data = (input_.data.array() > Scalar(0)).select(dy.data.array(), slope_ * dy.data.array());
    return dx;
  }
  std::string describe() const override {
    return slope_ == Scalar(0) ? "ReLU" : "LeakyReLU(" + std::to_string(double(slope_)).substr(0, 4) + ")";
  }

 private:
  Scalar slope_;
  T input_;
};

template <typename Scalar>
class Tanh final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  T forward(const T& x, Mode) override {
    output_ = x;
    output_.data = x.data.array().tanh();
    return output_;
  }
  T backward(const T& dy) override {
    T dx = T::uninitialized(dy.n, dy.c, dy.h, dy.w);
    dx.data = dy.data.array() * (Scalar(1) - output_.data.array().square());
    return dx;
  }
  std::string describe() const override { return "Tanh"; }

 private:
  T output_;
};

/// Nearest-neighbour upsampling by an integer factor (factor 1 is identity).
template <typename Scalar>
class Upsample final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  explicit Upsample(int factor) : f_(factor) {}

  T forward(const T& x, Mode) override {
    if (f_ == 1) return x;
    T y = T::uninitialized(x.n, x.c, x.h * f_, x.w * f_);
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch)
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx) y(i, ch, yy, xx) = x(i, ch, yy / f_, xx / f_);
    return y;
  }
  T backward(const T& dy) override {
    if (f_ == 1) return dy;
    T dx(dy.n, dy.c, dy.h / f_, dy.w / f_);
    for (int i = 0; i < dy.n; ++i)
      for (int ch = 0; ch < dy.c; ++ch)
        for (int yy = 0; yy < dy.h; ++yy)
          for (int xx = 0; xx < dy.w; ++xx) dx(i, ch, yy / f_, xx / f_) += dy(i, ch, yy, xx);
    return dx;
  }
  std::string describe() const override { return "Upsample(x" + std::to_string(f_) + ")"; }

 private:
  int f_;
};

/// 2x2 average pooling, stride 2.
template <typename Scalar>
class AvgPool2 final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  T forward(const T& x, Mode) override {
    T y(x.n, x.c, x.h / 2, x.w / 2);
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch)
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx)
            y(i, ch, yy, xx) = Scalar(0.25) * (x(i, ch, 2 * yy, 2 * xx) + x(i, ch, 2 * yy, 2 * xx + 1) +
                                               x(i, ch, 2 * yy + 1, 2 * xx) + x(i, ch, 2 * yy + 1, 2 * xx + 1));
    in_h_ = x.h;
    in_w_ = x.w;
    return y;
  }
  T backward(const T& dy) override {
    T dx(dy.n, dy.c, in_h_, in_w_);
    for (int i = 0; i < dy.n; ++i)
      for (int ch = 0; ch < dy.c; ++ch)
        for (int yy = 0; yy < dy.h; ++yy)
          for (int xx = 0; xx < dy.w; ++xx) {
            const Scalar g = Scalar(0.25) * dy(i, ch, yy, xx);
            dx(i, ch, 2 * yy, 2 * xx) += g;
            dx(i, ch, 2 * yy, 2 * xx + 1) += g;
            dx(i, ch, 2 * yy + 1, 2 * xx) += g;
            dx(i, ch, 2 * yy + 1, 2 * xx + 1) += g;
          }
    return dx;
  }
  std::string describe() const override { return "AvgPool2"; }

 private:
  int in_h_ = 0, in_w_ = 0;
};

/// Spatial mean per channel; output shape (n, c, 1, 1).
template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  T forward(const T& x, Mode) override {
    in_h_ = x.h;
    in_w_ = x.w;
    T y = T::uninitialized(x.n, x.c, 1, 1);
    for (int i = 0; i < x.n; ++i) y.matrix(i) = x.matrix(i).rowwise().mean();
    return y;
  }
  T backward(const T& dy) override {
    T dx = T::uninitialized(dy.n, dy.c, in_h_, in_w_);
    const Scalar inv = Scalar(1) / Scalar(Eigen::Index(in_h_) * in_w_);
    for (int i = 0; i < dy.n; ++i) dx.matrix(i).colwise() = dy.matrix(i).col(0) * inv;
    return dx;
  }
  std::string describe() const override { return "GlobalAvgPool"; }

 private:
  int in_h_ = 0, in_w_ = 0;
};

/// Fully connected layer on flattened samples; output shape (n, out, 1, 1).
template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  Linear(int in, int out, std::mt19937_64& rng) : in_(in), out_(out) {
    weight_.resize(Eigen::Index(in) * out);
    bias_.resize(out);
    init_uniform(weight_, in, rng);
    init_uniform(bias_, in, rng);
  }

  T forward(const T& x, Mode) override {
    if (x.sample_size() != in_) throw ShapeMismatchError("Linear: expected " + std::to_string(in_) + " features");
    input_ = x;
    T y(x.n, out_, 1, 1);
    y.flat().noalias() = x.flat() * W().transpose();
    y.flat().rowwise() += bias_.value.transpose();
    return y;
  }
  T backward(const T& dy) override {
    auto dW = typename T::SampleMap(weight_.grad.data(), out_, in_);
    dW.noalias() += dy.flat().transpose() * input_.flat();
    bias_.grad += dy.flat().colwise().sum().transpose();
    T dx(input_.n, input_.c, input_.h, input_.w);
    dx.flat().noalias() = dy.flat() * W();
    return dx;
  }
  void collect(const std::string& prefix, ParameterList<Scalar>& out) override {
    out.push_back({prefix + "weight", &weight_});
    out.push_back({prefix + "bias", &bias_});
  }
  std::string describe() const override {
    return "Linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
  }

 private:
  typename T::ConstSampleMap W() const { return typename T::ConstSampleMap(weight_.value.data(), out_, in_); }

  int in_, out_;
  Parameter<Scalar> weight_, bias_;
  T input_;
};

template <typename Scalar>
class Reshape final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}

  T forward(const T& x, Mode) override {
    if (x.sample_size() != Eigen::Index(c_) * h_ * w_) throw ShapeMismatchError("Reshape: size mismatch");
    in_c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    T y = x;
    y.c = c_;
    y.h = h_;
    y.w = w_;
    return y;
  }
  T backward(const T& dy) override {
    T dx = dy;
    dx.c = in_c_;
    dx.h = in_h_;
    dx.w = in_w_;
    return dx;
  }
  std::string describe() const override {
    return "Reshape(" + std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_) + ")";
  }

 private:
  int c_, h_, w_;
  int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// Ordered chain of named layers.
template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  using T = Tensor<Scalar>;

  template <typename L, typename... Args>
  L& add(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back({std::move(name), std::move(layer)});
    return ref;
  }

  T forward(const T& x, Mode mode) override {
    T h = x;
    for (auto& [name, layer] : layers_) h = layer->forward(h, mode);
    return h;
  }
  T backward(const T& dy) override {
    T g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
    return g;
  }
  void collect(const std::string& prefix, ParameterList<Scalar>& out) override {
    for (auto& [name, layer] : layers_) layer->collect(prefix + name + ".", out);
  }
  std::string describe() const override { return "Sequential(" + std::to_string(layers_.size()) + ")"; }

  /// One "name: description" line per leaf layer.
  std::vector<std::string> manifest(const std::string& prefix = {}) const {
    std::vector<std::string> lines;
    for (const auto& [name, layer] : layers_) {
      if (auto* seq = dynamic_cast<const Sequential*>(layer.get())) {
        auto sub = seq->manifest(prefix + name + ".");
        lines.insert(lines.end(), sub.begin(), sub.end());
      } else {
        lines.push_back(prefix + name + ": " + layer->describe());
      }
    }
    return lines;
  }

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer<Scalar>>>> layers_;
};

}  // namespace cmr::nn
