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

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cmr/nn/layers.hpp"

namespace cmr::seg {

/// Encoder-decoder segmenter with skip connections.
///
/// Level l has width base * 2^l and two (3x3 conv, BN, LeakyReLU) layers;
/// levels after the first start with a stride-2 conv. Each decoder level
/// upsamples 2x, concatenates the encoder features of that level and
/// applies two more conv layers; a 1x1 conv gives the class logits.
template <typename Scalar>
class UNet {
 public:
  using T = nn::Tensor<Scalar>;

  UNet(int in_channels, int classes, int base_width, int levels, double slope, std::mt19937_64& rng) {
    if (levels < 2 || base_width < 1) throw InvalidArgumentError("UNet: need at least two levels and a positive width");
    int in = in_channels;
    for (int l = 0; l < levels; ++l) {
      widths_.push_back(base_width << l);
      encoder_.push_back(block(in, widths_[l], l == 0 ? 1 : 2, slope, rng));
      in = widths_[l];
    }
    for (int l = 0; l + 1 < levels; ++l) {
      ups_.push_back(std::make_unique<nn::Upsample<Scalar>>(2));
      decoder_.push_back(block(widths_[l + 1] + widths_[l], widths_[l], 1, slope, rng));
    }
    head_ = std::make_unique<nn::Conv2d<Scalar>>(widths_[0], classes, 1, 1, 0, rng);
  }

  int levels() const { return static_cast<int>(widths_.size()); }

  T forward(const T& x, nn::Mode mode) {
    const int L = levels();
    const int div = 1 << (L - 1);
    if (x.h % div != 0 || x.w % div != 0) throw ShapeMismatchError("UNet: input size must be divisible by " + std::to_string(div));
    skips_.clear();
    T h = x;
    for (int l = 0; l < L; ++l) {
      h = encoder_[l]->forward(h, mode);
      if (l + 1 < L) skips_.push_back(h);
    }
    for (int l = L - 2; l >= 0; --l) h = decoder_[l]->forward(nn::concat_channels(ups_[l]->forward(h, mode), skips_[l]), mode);
    return head_->forward(h, mode);
  }

  T backward(const T& dlogits) {
    const int L = levels();
    T g = head_->backward(dlogits);
    std::vector<T> dskip(L - 1);
    for (int l = 0; l + 1 < L; ++l) {
      T gu;
      nn::split_channels(decoder_[l]->backward(g), widths_[l + 1], gu, dskip[l]);
      g = ups_[l]->backward(gu);
    }
    for (int l = L - 1; l >= 0; --l) {
      if (l + 1 < L) g.data += dskip[l].data;
      g = encoder_[l]->backward(g);
    }
    return g;
  }

  void collect(const std::string& prefix, nn::ParameterList<Scalar>& out) {
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l]->collect(prefix + "enc" + std::to_string(l) + ".", out);
    for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l]->collect(prefix + "dec" + std::to_string(l) + ".", out);
    head_->collect(prefix + "head.", out);
  }

  std::vector<std::string> manifest(const std::string& prefix = {}) const {
    std::vector<std::string> lines;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      auto sub = encoder_[l]->manifest(prefix + "enc" + std::to_string(l) + ".");
      lines.insert(lines.end(), sub.begin(), sub.end());
    }
    for (std::size_t l = decoder_.size(); l-- > 0;) {
      lines.push_back(prefix + "up" + std::to_string(l) + ": " + ups_[l]->describe());
      auto sub = decoder_[l]->manifest(prefix + "dec" + std::to_string(l) + ".");
      lines.insert(lines.end(), sub.begin(), sub.end());
    }
    lines.push_back(prefix + "head: " + head_->describe());
    return lines;
  }

 private:
  static std::unique_ptr<nn::Sequential<Scalar>> block(int in, int out, int stride, double slope, std::mt19937_64& rng) {
    auto b = std::make_unique<nn::Sequential<Scalar>>();
    b->template add<nn::Conv2d<Scalar>>("conv0", in, out, 3, stride, 1, rng);
    b->template add<nn::BatchNorm2d<Scalar>>("bn0", out);
    b->template add<nn::LeakyReLU<Scalar>>("act0", slope);
    b->template add<nn::Conv2d<Scalar>>("conv1", out, out, 3, 1, 1, rng);
    b->template add<nn::BatchNorm2d<Scalar>>("bn1", out);
    b->template add<nn::LeakyReLU<Scalar>>("act1", slope);
    return b;
  }

  std::vector<int> widths_;
  std::vector<std::unique_ptr<nn::Sequential<Scalar>>> encoder_, decoder_;
  std::vector<std::unique_ptr<nn::Upsample<Scalar>>> ups_;
  std::unique_ptr<nn::Conv2d<Scalar>> head_;
  std::vector<T> skips_;
};

}  // namespace cmr::seg
