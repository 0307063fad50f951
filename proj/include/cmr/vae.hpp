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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "cmr/nn/functional.hpp"
#include "cmr/nn/layers.hpp"
#include "cmr/preprocess.hpp"

namespace cmr {

struct VaeConfig {
  int n_z = 16;
  double beta = 15.0;
  /// Cross-entropy class weights; computed as normalised inverse class
  /// frequency of the training set when absent.
  std::optional<std::array<double, kNumClasses>> ce_class_weights;
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 1e-4;
  /// When set, the step size follows a cosine from learning_rate down to
  /// this value at the last epoch.
  std::optional<double> final_learning_rate;
  std::uint64_t seed = 0;

  int input_size = 128;
  std::vector<int> widths{32, 64, 128, 256};
  /// Downsampling factor of the first conv of each encoder block; the
  /// decoder upsamples by the same factors in reverse.
  std::vector<int> strides{2, 2, 2, 2};
  std::vector<int> fc_hidden{256, 128, 64};
  double leaky_slope = 0.2;
  /// Sum: per-sample pixel sum of the weighted cross-entropy (averaged over
  /// the batch). Mean: average over every pixel.
  nn::Reduction ce_reduction = nn::Reduction::Sum;
  double validation_fraction = 0.1;

  void validate() const;
  int bottleneck_size() const;
};

nlohmann::json to_json(const VaeConfig& config);
VaeConfig vae_config_from_json(const nlohmann::json& j);

struct LatentCode {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

struct VaeLoss {
  double ce = 0.0;
  double kld = 0.0;
  double total = 0.0;
};

/// Convolutional beta-VAE over 4-channel one-hot label maps.
///
/// Encoder: four blocks of three (conv, BN, LeakyReLU) layers, the first
/// conv of each block strided; then four fully connected layers producing
/// [mu, log_var]. Decoder: a fully connected projection, four blocks of
/// (upsample, two conv/BN/LeakyReLU), and a final (conv, BN, LeakyReLU,
/// conv to 4 channels) block whose logits feed a channel softmax.
template <typename Scalar>
class LabelVae {
 public:
  using T = nn::Tensor<Scalar>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  struct Encoded {
    Matrix mu;       // n x n_z
    Matrix log_var;  // n x n_z
  };

  explicit LabelVae(VaeConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    build(rng);
  }

  const VaeConfig& config() const { return config_; }
  VaeConfig& config() { return config_; }

  Encoded encode(const T& onehot, nn::Mode mode) {
    if (onehot.c != kNumClasses || onehot.h != config_.input_size || onehot.w != config_.input_size) {
      throw ShapeMismatchError("LabelVae::encode: expected " + std::to_string(kNumClasses) + "x" +
                               std::to_string(config_.input_size) + "x" + std::to_string(config_.input_size) +
                               " input");
    }
    const T out = encoder_.forward(onehot, mode);
    const int nz = config_.n_z;
    Encoded e{Matrix(out.n, nz), Matrix(out.n, nz)};
    const auto flat = out.flat();
    e.mu = flat.leftCols(nz);
    e.log_var = flat.rightCols(nz);
    return e;
  }

  T decode_logits(const Matrix& z, nn::Mode mode) {
    if (z.cols() != config_.n_z) throw ShapeMismatchError("LabelVae::decode: latent size mismatch");
    T in(static_cast<int>(z.rows()), config_.n_z, 1, 1);
    in.flat() = z;
    return decoder_.forward(in, mode);
  }

  /// Returns dL/dz.
  Matrix backward_decoder(const T& dlogits) {
    const T dz = decoder_.backward(dlogits);
    return dz.flat();
  }

  void backward_encoder(const Matrix& dmu, const Matrix& dlog_var) {
    T d(static_cast<int>(dmu.rows()), 2 * config_.n_z, 1, 1);
    d.flat().leftCols(config_.n_z) = dmu;
    d.flat().rightCols(config_.n_z) = dlog_var;
    encoder_.backward(d);
  }

  /// Full training objective on a batch with fixed reparameterisation noise.
  /// Accumulates parameter gradients when \p backward is set.
  VaeLoss forward_backward(const T& x, const Matrix& noise, std::span<const double> class_weights,
                           bool backward, nn::Mode mode = nn::Mode::Train) {
    const Encoded enc = encode(x, mode);
    const Matrix sd = (enc.log_var.array() * Scalar(0.5)).exp().matrix();
    const Matrix z = enc.mu + sd.cwiseProduct(noise);
    const T logits = decode_logits(z, mode);
    const T probs = nn::softmax_channels(logits);
    T dlogits;
    VaeLoss loss;
    loss.ce = nn::weighted_cross_entropy(probs, x, class_weights, config_.ce_reduction,
                                         backward ? &dlogits : nullptr);
    Matrix dmu_kl, dlv_kl;
    loss.kld = nn::kl_divergence(enc.mu, enc.log_var, &dmu_kl, &dlv_kl);
    loss.total = loss.ce + config_.beta * loss.kld;
    if (backward) {
      const Matrix dz = backward_decoder(dlogits);
      const Scalar beta = static_cast<Scalar>(config_.beta);
      const Matrix dmu = dz + beta * dmu_kl;
      const Matrix dlv = (dz.array() * noise.array() * sd.array() * Scalar(0.5)).matrix() + beta * dlv_kl;
      backward_encoder(dmu, dlv);
    }
    return loss;
  }

  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out;
    encoder_.collect("encoder.", out);
    decoder_.collect("decoder.", out);
    return out;
  }

  std::vector<std::string> manifest() const {
    auto lines = encoder_.manifest("encoder.");
    auto dec = decoder_.manifest("decoder.");
    lines.insert(lines.end(), dec.begin(), dec.end());
    return lines;
  }

 private:
  void build(std::mt19937_64& rng) {
    using namespace nn;
    const auto& w = config_.widths;
    const auto& s = config_.strides;
    const double slope = config_.leaky_slope;
    const int bottleneck = config_.bottleneck_size();

    int in = kNumClasses;
    for (int b = 0; b < 4; ++b) {
      auto& block = encoder_.template add<Sequential<Scalar>>("block" + std::to_string(b));
      for (int l = 0; l < 3; ++l) {
        const std::string id = std::to_string(l);
        block.template add<Conv2d<Scalar>>("conv" + id, in, w[b], 3, l == 0 ? s[b] : 1, 1, rng);
        block.template add<BatchNorm2d<Scalar>>("bn" + id, w[b]);
        block.template add<LeakyReLU<Scalar>>("act" + id, slope);
        in = w[b];
      }
    }
    int features = w[3] * bottleneck * bottleneck;
    for (std::size_t f = 0; f < config_.fc_hidden.size(); ++f) {
      encoder_.template add<Linear<Scalar>>("fc" + std::to_string(f), features, config_.fc_hidden[f], rng);
      encoder_.template add<LeakyReLU<Scalar>>("fc_act" + std::to_string(f), slope);
      features = config_.fc_hidden[f];
    }
    encoder_.template add<Linear<Scalar>>("fc" + std::to_string(config_.fc_hidden.size()), features, 2 * config_.n_z, rng);

    decoder_.template add<Linear<Scalar>>("fc", config_.n_z, w[3] * bottleneck * bottleneck, rng);
    decoder_.template add<LeakyReLU<Scalar>>("fc_act", slope);
    decoder_.template add<Reshape<Scalar>>("reshape", w[3], bottleneck, bottleneck);
    const std::array<int, 4> outs{w[2], w[1], w[0], w[0]};
    in = w[3];
    for (int b = 0; b < 4; ++b) {
      auto& block = decoder_.template add<Sequential<Scalar>>("block" + std::to_string(b));
      block.template add<Upsample<Scalar>>("up", s[3 - b]);
      for (int l = 0; l < 2; ++l) {
        const std::string id = std::to_string(l);
        block.template add<Conv2d<Scalar>>("conv" + id, in, outs[b], 3, 1, 1, rng);
        block.template add<BatchNorm2d<Scalar>>("bn" + id, outs[b]);
        block.template add<LeakyReLU<Scalar>>("act" + id, slope);
        in = outs[b];
      }
    }
    auto& head = decoder_.template add<Sequential<Scalar>>("final");
    head.template add<Conv2d<Scalar>>("conv0", in, in, 3, 1, 1, rng);
    head.template add<BatchNorm2d<Scalar>>("bn0", in);
    head.template add<LeakyReLU<Scalar>>("act0", slope);
    head.template add<Conv2d<Scalar>>("conv1", in, kNumClasses, 3, 1, 1, rng);
  }

  VaeConfig config_;
  nn::Sequential<Scalar> encoder_;
  nn::Sequential<Scalar> decoder_;
};

using Vae = LabelVae<float>;

/// Stacks one-hot maps into an (n, 4, H, W) tensor.
nn::Tensor<float> stack_one_hot(std::span<const OneHotLabelMap> maps);

/// Inverse class frequency, normalised so the mean weight per pixel is 1
/// (the weighted loss keeps the scale of the unweighted one).
std::array<double, kNumClasses> inverse_frequency_weights(std::span<const OneHotLabelMap> maps);

/// Deterministic encoding (eval-mode batch norm).
LatentCode encode(Vae& model, const OneHotLabelMap& label);
/// Batch version: row i holds the mu of map i; log variances in \p log_var when given.
Eigen::MatrixXd encode_mu(Vae& model, std::span<const OneHotLabelMap> maps, Eigen::MatrixXd* log_var = nullptr);

/// z = mu + exp(0.5 log_var) * noise.
Eigen::VectorXd reparameterize(const LatentCode& code, const Eigen::VectorXd& noise);

/// Per-pixel class probabilities for a latent vector.
OneHotLabelMap decode(Vae& model, const Eigen::VectorXd& z);
/// Batch decode; row i of \p z yields map i.
std::vector<OneHotLabelMap> decode_batch(Vae& model, const Eigen::MatrixXd& z);

/// Loss of a single prediction (cross-entropy under the configured
/// reduction, KL divergence of \p code, total = ce + beta * kld).
VaeLoss vae_loss(const OneHotLabelMap& pred, const OneHotLabelMap& target, const LatentCode& code,
                 const VaeConfig& config);

struct VaeEpochRecord {
  int epoch = 0;
  double ce = 0.0;
  double kld = 0.0;
  double total = 0.0;
  double val_ce = 0.0;
  double val_total = 0.0;
};

struct TrainedVae {
  std::unique_ptr<Vae> model;
  std::vector<VaeEpochRecord> log;
};

using VaeProgress = std::function<void(const VaeEpochRecord&)>;

/// Trains on the given slices with Adam. The last validation_fraction of a
/// seeded shuffle is held out for the validation column of the log.
TrainedVae train_vae(std::span<const OneHotLabelMap> dataset, VaeConfig config, const VaeProgress& progress = {});

void save_vae(const std::filesystem::path& path, Vae& model);
std::unique_ptr<Vae> load_vae(const std::filesystem::path& path);
void write_vae_log(const std::filesystem::path& path, const std::vector<VaeEpochRecord>& log);

}  // namespace cmr
