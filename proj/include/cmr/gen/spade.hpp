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
#include <array>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cmr/nn/layers.hpp"

namespace cmr::gen {

/// Modulation with given per-channel statistics.
template <typename Scalar>
nn::Tensor<Scalar> spade_modulate(const nn::Tensor<Scalar>& h, const typename nn::Tensor<Scalar>::Vector& mean,
                                  const typename nn::Tensor<Scalar>::Vector& sd, const nn::Tensor<Scalar>& gamma,
                                  const nn::Tensor<Scalar>& beta) {
  nn::require_same_shape(h, gamma, "spade_modulate(gamma)");
  nn::require_same_shape(h, beta, "spade_modulate(beta)");
  if (mean.size() != h.c || sd.size() != h.c) throw ShapeMismatchError("spade_modulate: statistics length != channels");
  auto out = nn::Tensor<Scalar>::uninitialized(h.n, h.c, h.h, h.w);
  const auto inv = sd.cwiseInverse();
  for (int i = 0; i < h.n; ++i) {
    out.matrix(i) = (gamma.matrix(i).array() * (inv.asDiagonal() * (h.matrix(i).colwise() - mean)).array() +
                     beta.matrix(i).array())
                        .matrix();
  }
  return out;
}

/// out = gamma * (h - mean_c) / sqrt(var_c + eps) + beta, with mean/var the
/// per-channel statistics over (N, H, W) of \p h.
template <typename Scalar>
nn::Tensor<Scalar> spade_modulate(const nn::Tensor<Scalar>& h, const nn::Tensor<Scalar>& gamma,
                                  const nn::Tensor<Scalar>& beta, double eps = 1e-5) {
  using Vector = typename nn::Tensor<Scalar>::Vector;
  Vector mean = Vector::Zero(h.c), var = Vector::Zero(h.c);
  for (int i = 0; i < h.n; ++i) mean += h.matrix(i).rowwise().sum();
  const Scalar count = Scalar(double(h.n) * h.plane());
  mean /= count;
  for (int i = 0; i < h.n; ++i) var += (h.matrix(i).colwise() - mean).array().square().matrix().rowwise().sum();
  var /= count;
  const Vector sd = (var.array() + Scalar(eps)).sqrt().matrix();
  return spade_modulate(h, mean, sd, gamma, beta);
}

/// Spatially adaptive denormalisation: parameter-free batch norm followed by
/// a per-pixel affine map predicted from the label map,
///   out = (1 + g(label)) * norm(h) + b(label),
/// with g, b 3x3 convolutions over a shared ReLU feature layer.
template <typename Scalar>
class Spade {
 public:
  using T = nn::Tensor<Scalar>;

  Spade(int channels, int label_channels, int hidden, std::mt19937_64& rng)
      : channels_(channels),
        norm_(channels, false),
        shared_(label_channels, hidden, 3, 1, 1, rng),
        act_(0.0),
        gamma_(hidden, channels, 3, 1, 1, rng),
        beta_(hidden, channels, 3, 1, 1, rng) {}

  /// \p label must already be resized to the spatial size of \p x.
  T forward(const T& x, const T& label, nn::Mode mode) {
    if (label.n != x.n || label.h != x.h || label.w != x.w) throw ShapeMismatchError("Spade: label/feature size mismatch");
    xhat_ = norm_.forward(x, mode);
    const T a = act_.forward(shared_.forward(label, mode), mode);
    scale_ = gamma_.forward(a, mode);
    scale_.data.array() += Scalar(1);
    shift_ = beta_.forward(a, mode);
    T y = T::uninitialized(x.n, x.c, x.h, x.w);
    y.data = scale_.data.cwiseProduct(xhat_.data) + shift_.data;
    return y;
  }

  T backward(const T& dy) {
    T dscale = T::uninitialized(dy.n, dy.c, dy.h, dy.w);
    dscale.data = dy.data.cwiseProduct(xhat_.data);
    T da = gamma_.backward(dscale);
    da.data += beta_.backward(dy).data;
    shared_.backward(act_.backward(da));
    T dxhat = T::uninitialized(dy.n, dy.c, dy.h, dy.w);
    dxhat.data = dy.data.cwiseProduct(scale_.data);
    return norm_.backward(dxhat);
  }

  /// 1 + g and b from the last forward pass.
  const T& last_gamma() const { return scale_; }
  const T& last_beta() const { return shift_; }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    norm_.collect(prefix + "norm.", out);
    shared_.collect(prefix + "shared.", out);
    gamma_.collect(prefix + "gamma.", out);
    beta_.collect(prefix + "beta.", out);
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    out.push_back(prefix + "norm: " + norm_.describe());
    out.push_back(prefix + "shared: " + shared_.describe());
    out.push_back(prefix + "gamma: " + gamma_.describe());
    out.push_back(prefix + "beta: " + beta_.describe());
  }

 private:
  int channels_;
  nn::BatchNorm2d<Scalar> norm_;
  nn::Conv2d<Scalar> shared_;
  nn::LeakyReLU<Scalar> act_;
  nn::Conv2d<Scalar> gamma_, beta_;
  T xhat_, scale_, shift_;
};

/// SPADE residual block: two (SPADE, LeakyReLU, 3x3 conv) stages, plus a
/// (SPADE, 1x1 conv) shortcut when the channel count changes.
template <typename Scalar>
class SpadeResBlock {
 public:
  using T = nn::Tensor<Scalar>;

  SpadeResBlock(int in, int out, int label_channels, int hidden, double slope, std::mt19937_64& rng)
      : learned_shortcut_(in != out), mid_(std::min(in, out)) {
    norm0_ = std::make_unique<Spade<Scalar>>(in, label_channels, std::min(hidden, in), rng);
    act0_ = std::make_unique<nn::LeakyReLU<Scalar>>(slope);
    conv0_ = std::make_unique<nn::Conv2d<Scalar>>(in, mid_, 3, 1, 1, rng);
    norm1_ = std::make_unique<Spade<Scalar>>(mid_, label_channels, std::min(hidden, mid_), rng);
    act1_ = std::make_unique<nn::LeakyReLU<Scalar>>(slope);
    conv1_ = std::make_unique<nn::Conv2d<Scalar>>(mid_, out, 3, 1, 1, rng);
    if (learned_shortcut_) {
      norm_s_ = std::make_unique<Spade<Scalar>>(in, label_channels, std::min(hidden, in), rng);
      conv_s_ = std::make_unique<nn::Conv2d<Scalar>>(in, out, 1, 1, 0, rng, false);
    }
  }

  T forward(const T& x, const T& label, nn::Mode mode) {
    T h = norm0_->forward(x, label, mode);
    h = conv0_->forward(act0_->forward(h, mode), mode);
    h = norm1_->forward(h, label, mode);
    h = conv1_->forward(act1_->forward(h, mode), mode);
    if (learned_shortcut_) {
      h.data += conv_s_->forward(norm_s_->forward(x, label, mode), mode).data;
    } else {
      h.data += x.data;
    }
    return h;
  }

  T backward(const T& dy) {
    T g = conv1_->backward(dy);
    g = norm1_->backward(act1_->backward(g));
    g = conv0_->backward(g);
    g = norm0_->backward(act0_->backward(g));
    if (learned_shortcut_) {
      g.data += norm_s_->backward(conv_s_->backward(dy)).data;
    } else {
      g.data += dy.data;
    }
    return g;
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    norm0_->collect(prefix + "norm0.", out);
    conv0_->collect(prefix + "conv0.", out);
    norm1_->collect(prefix + "norm1.", out);
    conv1_->collect(prefix + "conv1.", out);
    if (learned_shortcut_) {
      norm_s_->collect(prefix + "norm_s.", out);
      conv_s_->collect(prefix + "conv_s.", out);
    }
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    norm0_->manifest(prefix + "norm0.", out);
    out.push_back(prefix + "act0: " + act0_->describe());
    out.push_back(prefix + "conv0: " + conv0_->describe());
    norm1_->manifest(prefix + "norm1.", out);
    out.push_back(prefix + "act1: " + act1_->describe());
    out.push_back(prefix + "conv1: " + conv1_->describe());
    if (learned_shortcut_) {
      norm_s_->manifest(prefix + "norm_s.", out);
      out.push_back(prefix + "conv_s: " + conv_s_->describe());
    }
  }

 private:
  bool learned_shortcut_;
  int mid_;
  std::unique_ptr<Spade<Scalar>> norm0_, norm1_, norm_s_;
  std::unique_ptr<nn::LeakyReLU<Scalar>> act0_, act1_;
  std::unique_ptr<nn::Conv2d<Scalar>> conv0_, conv1_, conv_s_;
};

/// Pre-activation residual block that halves the resolution.
template <typename Scalar>
class DownResBlock {
 public:
  using T = nn::Tensor<Scalar>;

  DownResBlock(int in, int out, double slope, std::mt19937_64& rng)
      : act0_(slope), conv0_(in, out, 3, 1, 1, rng), act1_(slope), conv1_(out, out, 3, 1, 1, rng),
        conv_s_(in, out, 1, 1, 0, rng, false) {}

  T forward(const T& x, nn::Mode mode) {
    T h = conv0_.forward(act0_.forward(x, mode), mode);
    h = pool_.forward(conv1_.forward(act1_.forward(h, mode), mode), mode);
    h.data += pool_s_.forward(conv_s_.forward(x, mode), mode).data;
    return h;
  }

  T backward(const T& dy) {
    T g = act1_.backward(conv1_.backward(pool_.backward(dy)));
    g = act0_.backward(conv0_.backward(g));
    g.data += conv_s_.backward(pool_s_.backward(dy)).data;
    return g;
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    conv0_.collect(prefix + "conv0.", out);
    conv1_.collect(prefix + "conv1.", out);
    conv_s_.collect(prefix + "conv_s.", out);
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    out.push_back(prefix + "conv0: " + conv0_.describe());
    out.push_back(prefix + "conv1: " + conv1_.describe());
    out.push_back(prefix + "pool: " + pool_.describe());
    out.push_back(prefix + "conv_s: " + conv_s_.describe());
  }

 private:
  nn::LeakyReLU<Scalar> act0_;
  nn::Conv2d<Scalar> conv0_;
  nn::LeakyReLU<Scalar> act1_;
  nn::Conv2d<Scalar> conv1_;
  nn::AvgPool2<Scalar> pool_;
  nn::Conv2d<Scalar> conv_s_;
  nn::AvgPool2<Scalar> pool_s_;
};

/// ResNet style encoder: strided stem, three down-sampling residual blocks,
/// global average pooling and a linear projection to the style code.
template <typename Scalar>
class StyleEncoder {
 public:
  using T = nn::Tensor<Scalar>;

  StyleEncoder(int width, int style_dim, double slope, std::mt19937_64& rng)
      : stem_(1, width, 3, 2, 1, rng), act_(slope), fc_(4 * width, style_dim, rng) {
    const int w[4] = {width, 2 * width, 4 * width, 4 * width};
    for (int b = 0; b < 3; ++b) blocks_.push_back(std::make_unique<DownResBlock<Scalar>>(w[b], w[b + 1], slope, rng));
  }

  /// (n, 1, H, W) -> (n, style_dim, 1, 1).
  T forward(const T& image, nn::Mode mode) {
    if (image.c != 1) throw ShapeMismatchError("StyleEncoder: expected single-channel images");
    T h = stem_.forward(image, mode);
    for (auto& b : blocks_) h = b->forward(h, mode);
    return fc_.forward(pool_.forward(act_.forward(h, mode), mode), mode);
  }

  T backward(const T& dstyle) {
    T g = act_.backward(pool_.backward(fc_.backward(dstyle)));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
    return stem_.backward(g);
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    stem_.collect(prefix + "stem.", out);
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b]->collect(prefix + "block" + std::to_string(b) + ".", out);
    fc_.collect(prefix + "fc.", out);
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    out.push_back(prefix + "stem: " + stem_.describe());
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b]->manifest(prefix + "block" + std::to_string(b) + ".", out);
    out.push_back(prefix + "pool: " + pool_.describe());
    out.push_back(prefix + "fc: " + fc_.describe());
  }

 private:
  nn::Conv2d<Scalar> stem_;
  std::vector<std::unique_ptr<DownResBlock<Scalar>>> blocks_;
  nn::LeakyReLU<Scalar> act_;
  nn::GlobalAvgPool<Scalar> pool_;
  nn::Linear<Scalar> fc_;
};

/// Label-to-image generator.
///
/// The initial block concatenates the label map resized to size/16 with the
/// style code broadcast over that grid and applies a 3x3 conv; five SPADE
/// residual blocks follow, separated by 2x nearest upsampling, then a
/// LeakyReLU, a 3x3 conv to one channel and tanh.
template <typename Scalar>
class SpadeGenerator {
 public:
  using T = nn::Tensor<Scalar>;
  static constexpr int kLevels = 5;

  SpadeGenerator(int image_size, int width, int style_dim, int label_channels, int spade_hidden, double slope,
                 std::mt19937_64& rng)
      : size_(image_size), style_dim_(style_dim), label_channels_(label_channels),
        outs_{4 * width, 4 * width, 2 * width, width, std::max(width / 2, 1)},
        head_(label_channels + style_dim, 4 * width, 3, 1, 1, rng),
        act_(slope),
        out_conv_(outs_[kLevels - 1], 1, 3, 1, 1, rng) {
    int in = 4 * width;
    for (int k = 0; k < kLevels; ++k) {
      blocks_.push_back(std::make_unique<SpadeResBlock<Scalar>>(in, outs_[k], label_channels, spade_hidden, slope, rng));
      ups_.push_back(std::make_unique<nn::Upsample<Scalar>>(k == 0 ? 1 : 2));
      in = outs_[k];
    }
  }

  int initial_size() const { return size_ >> (kLevels - 1); }

  /// labels (n, label_channels, S, S), style (n, style_dim, 1, 1) -> image (n, 1, S, S) in [-1, 1].
  T forward(const T& labels, const T& style, nn::Mode mode) {
    if (labels.c != label_channels_ || labels.h != size_ || labels.w != size_) {
      throw ShapeMismatchError("SpadeGenerator: expected " + std::to_string(label_channels_) + "x" + std::to_string(size_) +
                               "x" + std::to_string(size_) + " labels");
    }
    if (style.n != labels.n || style.sample_size() != style_dim_) throw ShapeMismatchError("SpadeGenerator: style size mismatch");
    pyramid_.clear();
    for (int k = 0; k < kLevels; ++k) {
      const int s = initial_size() << k;
      pyramid_.push_back(nn::resize_nearest(labels, s, s));
    }
    const int s0 = initial_size();
    T tiled(labels.n, style_dim_, s0, s0);
    for (int i = 0; i < labels.n; ++i) tiled.matrix(i).colwise() = style.matrix(i).col(0);
    T h = head_.forward(nn::concat_channels(pyramid_[0], tiled), mode);
    for (int k = 0; k < kLevels; ++k) h = blocks_[k]->forward(ups_[k]->forward(h, mode), pyramid_[k], mode);
    return tanh_.forward(out_conv_.forward(act_.forward(h, mode), mode), mode);
  }

  /// Returns dL/dstyle, shape (n, style_dim, 1, 1).
  T backward(const T& dimage) {
    T g = act_.backward(out_conv_.backward(tanh_.backward(dimage)));
    for (int k = kLevels - 1; k >= 0; --k) g = ups_[k]->backward(blocks_[k]->backward(g));
    T dlabel, dtiled;
    nn::split_channels(head_.backward(g), label_channels_, dlabel, dtiled);
    T dstyle(dtiled.n, style_dim_, 1, 1);
    for (int i = 0; i < dtiled.n; ++i) dstyle.matrix(i) = dtiled.matrix(i).rowwise().sum();
    return dstyle;
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    head_.collect(prefix + "head.", out);
    for (int k = 0; k < kLevels; ++k) blocks_[k]->collect(prefix + "block" + std::to_string(k) + ".", out);
    out_conv_.collect(prefix + "out.", out);
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    out.push_back(prefix + "head: " + head_.describe());
    for (int k = 0; k < kLevels; ++k) {
      if (k > 0) out.push_back(prefix + "up" + std::to_string(k) + ": " + ups_[k]->describe());
      blocks_[k]->manifest(prefix + "block" + std::to_string(k) + ".", out);
    }
    out.push_back(prefix + "act: " + act_.describe());
    out.push_back(prefix + "out: " + out_conv_.describe());
    out.push_back(prefix + "tanh: " + tanh_.describe());
  }

 private:
  int size_, style_dim_, label_channels_;
  std::array<int, kLevels> outs_;
  nn::Conv2d<Scalar> head_;
  std::vector<std::unique_ptr<SpadeResBlock<Scalar>>> blocks_;
  std::vector<std::unique_ptr<nn::Upsample<Scalar>>> ups_;
  nn::LeakyReLU<Scalar> act_;
  nn::Conv2d<Scalar> out_conv_;
  nn::Tanh<Scalar> tanh_;
  std::vector<T> pyramid_;
};

/// Fully convolutional patch discriminator: three strided (conv, LeakyReLU)
/// stages whose activations serve as matching features, then a 3x3 conv to
/// one logit per patch.
template <typename Scalar>
class PatchDiscriminator {
 public:
  using T = nn::Tensor<Scalar>;
  static constexpr int kStages = 3;

  PatchDiscriminator(int in_channels, int width, double slope, std::mt19937_64& rng)
      : out_(4 * width, 1, 3, 1, 1, rng) {
    int in = in_channels;
    for (int s = 0; s < kStages; ++s) {
      const int w = width << s;
      convs_.push_back(std::make_unique<nn::Conv2d<Scalar>>(in, w, 3, 2, 1, rng));
      acts_.push_back(std::make_unique<nn::LeakyReLU<Scalar>>(slope));
      in = w;
    }
  }

  /// Returns patch logits; stage activations go to \p features.
  T forward(const T& x, std::vector<T>& features) {
    features.clear();
    T h = x;
    for (int s = 0; s < kStages; ++s) {
      h = acts_[s]->forward(convs_[s]->forward(h, nn::Mode::Train), nn::Mode::Train);
      features.push_back(h);
    }
    return out_.forward(h, nn::Mode::Train);
  }

  /// \p dfeatures is empty or holds one gradient per stage activation.
  T backward(const T& dlogits, const std::vector<T>& dfeatures) {
    T g = out_.backward(dlogits);
    for (int s = kStages - 1; s >= 0; --s) {
      if (!dfeatures.empty()) g.data += dfeatures[s].data;
      g = convs_[s]->backward(acts_[s]->backward(g));
    }
    return g;
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    for (int s = 0; s < kStages; ++s) convs_[s]->collect(prefix + "conv" + std::to_string(s) + ".", out);
    out_.collect(prefix + "out.", out);
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    for (int s = 0; s < kStages; ++s) {
      out.push_back(prefix + "conv" + std::to_string(s) + ": " + convs_[s]->describe());
      out.push_back(prefix + "act" + std::to_string(s) + ": " + acts_[s]->describe());
    }
    out.push_back(prefix + "out: " + out_.describe());
  }

 private:
  std::vector<std::unique_ptr<nn::Conv2d<Scalar>>> convs_;
  std::vector<std::unique_ptr<nn::LeakyReLU<Scalar>>> acts_;
  nn::Conv2d<Scalar> out_;
};

/// Patch discriminators applied to the input and to successive 2x average
/// pooled copies of it.
template <typename Scalar>
class MultiScaleDiscriminator {
 public:
  using T = nn::Tensor<Scalar>;

  struct Output {
    T logits;
    std::vector<T> features;
  };

  MultiScaleDiscriminator(int scales, int in_channels, int width, double slope, std::mt19937_64& rng) {
    for (int s = 0; s < scales; ++s) {
      nets_.push_back(std::make_unique<PatchDiscriminator<Scalar>>(in_channels, width, slope, rng));
      if (s > 0) pools_.push_back(std::make_unique<nn::AvgPool2<Scalar>>());
    }
  }

  int scales() const { return static_cast<int>(nets_.size()); }

  std::vector<Output> forward(const T& x) {
    std::vector<Output> out(nets_.size());
    T h = x;
    for (std::size_t s = 0; s < nets_.size(); ++s) {
      if (s > 0) h = pools_[s - 1]->forward(h, nn::Mode::Train);
      out[s].logits = nets_[s]->forward(h, out[s].features);
    }
    return out;
  }

  /// Per-scale logit gradients and (optionally empty) feature gradients.
  T backward(const std::vector<T>& dlogits, const std::vector<std::vector<T>>& dfeatures) {
    T g;
    for (int s = scales() - 1; s >= 0; --s) {
      static const std::vector<T> none;
      T d = nets_[s]->backward(dlogits[s], dfeatures.empty() ? none : dfeatures[s]);
      if (s < scales() - 1) d.data += pools_[s]->backward(g).data;
      g = std::move(d);
    }
    return g;
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    for (std::size_t s = 0; s < nets_.size(); ++s) nets_[s]->collect(prefix + "scale" + std::to_string(s) + ".", out);
  }

  void manifest(const std::string& prefix, std::vector<std::string>& out) const {
    for (std::size_t s = 0; s < nets_.size(); ++s) {
      if (s > 0) out.push_back(prefix + "pool" + std::to_string(s) + ": AvgPool2");
      nets_[s]->manifest(prefix + "scale" + std::to_string(s) + ".", out);
    }
  }

 private:
  std::vector<std::unique_ptr<PatchDiscriminator<Scalar>>> nets_;
  std::vector<std::unique_ptr<nn::AvgPool2<Scalar>>> pools_;
};

}  // namespace cmr::gen
