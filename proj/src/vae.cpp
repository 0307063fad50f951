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

#include "cmr/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "cmr/nn/checkpoint.hpp"
#include "cmr/nn/optim.hpp"

namespace cmr {

void VaeConfig::validate() const {
  if (n_z < 2) throw InvalidArgumentError("VaeConfig: n_z must be at least 2");
  if (!(beta >= 0.0)) throw InvalidArgumentError("VaeConfig: beta must be non-negative");
  if (ce_class_weights) {
    for (double w : *ce_class_weights) {
      if (!(w >= 0.0)) throw InvalidArgumentError("VaeConfig: class weights must be non-negative");
    }
  }
  if (final_learning_rate && !(*final_learning_rate > 0.0 && *final_learning_rate <= learning_rate)) {
    throw InvalidArgumentError("VaeConfig: final_learning_rate must lie in (0, learning_rate]");
  }
  if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0)) {
    throw InvalidArgumentError("VaeConfig: invalid training scalars");
  }
  if (widths.size() != 4 || strides.size() != 4) {
    throw InvalidArgumentError("VaeConfig: widths and strides need four entries (one per block)");
  }
  for (int w : widths)
    if (w < 1) throw InvalidArgumentError("VaeConfig: widths must be positive");
  for (int h : fc_hidden)
    if (h < 1) throw InvalidArgumentError("VaeConfig: fc_hidden must be positive");
  if (fc_hidden.size() != 3) throw InvalidArgumentError("VaeConfig: four fully connected layers need three hidden sizes");
  int size = input_size;
  for (int s : strides) {
    if (s < 1 || size % s != 0) throw InvalidArgumentError("VaeConfig: strides must divide the input size");
    size /= s;
  }
}

int VaeConfig::bottleneck_size() const {
  int size = input_size;
  for (int s : strides) size /= s;
  return size;
}

nlohmann::json to_json(const VaeConfig& c) {
  nlohmann::json j{{"n_z", c.n_z},
                   {"beta", c.beta},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"seed", c.seed},
                   {"input_size", c.input_size},
                   {"widths", c.widths},
                   {"strides", c.strides},
                   {"fc_hidden", c.fc_hidden},
                   {"leaky_slope", c.leaky_slope},
                   {"ce_reduction", c.ce_reduction == nn::Reduction::Sum ? "sum" : "mean"},
                   {"validation_fraction", c.validation_fraction},
                   {"kernel_size", 3},
                   {"downsampling", "strided first conv per encoder block"},
                   {"upsampling", "nearest neighbour"}};
  if (c.ce_class_weights) j["ce_class_weights"] = *c.ce_class_weights;
  if (c.final_learning_rate) j["final_learning_rate"] = *c.final_learning_rate;
  return j;
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.n_z = j.value("n_z", c.n_z);
  c.beta = j.value("beta", c.beta);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.input_size = j.value("input_size", c.input_size);
  c.widths = j.value("widths", c.widths);
  c.strides = j.value("strides", c.strides);
  c.fc_hidden = j.value("fc_hidden", c.fc_hidden);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  const auto red = j.value("ce_reduction", std::string("sum"));
  if (red != "sum" && red != "mean") throw InvalidArgumentError("VaeConfig: ce_reduction must be sum or mean");
  c.ce_reduction = red == "sum" ? nn::Reduction::Sum : nn::Reduction::Mean;
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  if (j.contains("final_learning_rate")) c.final_learning_rate = j.at("final_learning_rate").get<double>();
  if (j.contains("ce_class_weights")) {
    const auto w = j.at("ce_class_weights").get<std::vector<double>>();
    if (w.size() != kNumClasses) throw InvalidArgumentError("VaeConfig: ce_class_weights needs 4 entries");
    c.ce_class_weights = std::array<double, kNumClasses>{w[0], w[1], w[2], w[3]};
  }
  c.validate();
  return c;
}

nn::Tensor<float> stack_one_hot(std::span<const OneHotLabelMap> maps) {
  if (maps.empty()) throw InvalidArgumentError("stack_one_hot: no maps");
  const int h = maps[0].height, w = maps[0].width;
  nn::Tensor<float> t(static_cast<int>(maps.size()), kNumClasses, h, w);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].height != h || maps[i].width != w) throw ShapeMismatchError("stack_one_hot: mixed map sizes");
    t.matrix(static_cast<int>(i)) = maps[i].channels;
  }
  return t;
}

std::array<double, kNumClasses> inverse_frequency_weights(std::span<const OneHotLabelMap> maps) {
  std::array<double, kNumClasses> counts{};
  for (const auto& m : maps)
    for (int c = 0; c < kNumClasses; ++c) counts[c] += m.channels.row(c).sum();
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::array<double, kNumClasses> w{};
  // Every present class then carries an equal share of the total weight.
  int present = 0;
  for (double n : counts) present += n > 0.0;
  for (int c = 0; c < kNumClasses; ++c) w[c] = counts[c] > 0.0 ? total / (present * counts[c]) : 0.0;
  return w;
}

Eigen::MatrixXd encode_mu(Vae& model, std::span<const OneHotLabelMap> maps, Eigen::MatrixXd* log_var) {
  Eigen::MatrixXd mu(static_cast<Eigen::Index>(maps.size()), model.config().n_z);
  if (log_var) log_var->resize(mu.rows(), mu.cols());
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < maps.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, maps.size() - start);
    const auto enc = model.encode(stack_one_hot(maps.subspan(start, count)), nn::Mode::Eval);
    mu.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = enc.mu.cast<double>();
    if (log_var) {
      log_var->middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = enc.log_var.cast<double>();
    }
  }
  return mu;
}

LatentCode encode(Vae& model, const OneHotLabelMap& label) {
  Eigen::MatrixXd lv;
  const Eigen::MatrixXd mu = encode_mu(model, std::span(&label, 1), &lv);
  return {mu.row(0).transpose(), lv.row(0).transpose()};
}

Eigen::VectorXd reparameterize(const LatentCode& code, const Eigen::VectorXd& noise) {
  if (noise.size() != code.mu.size() || code.log_var.size() != code.mu.size()) {
    throw ShapeMismatchError("reparameterize: noise length must equal n_z");
  }
  return code.mu + ((0.5 * code.log_var.array()).exp() * noise.array()).matrix();
}

std::vector<OneHotLabelMap> decode_batch(Vae& model, const Eigen::MatrixXd& z) {
  if (z.cols() != model.config().n_z) throw ShapeMismatchError("decode: latent size mismatch");
  std::vector<OneHotLabelMap> out;
  out.reserve(static_cast<std::size_t>(z.rows()));
  constexpr Eigen::Index kChunk = 32;
  for (Eigen::Index start = 0; start < z.rows(); start += kChunk) {
    const Eigen::Index count = std::min(kChunk, z.rows() - start);
    const Eigen::MatrixXf zf = z.middleRows(start, count).cast<float>();
    const auto probs = nn::softmax_channels(model.decode_logits(zf, nn::Mode::Eval));
    for (int i = 0; i < probs.n; ++i) {
      OneHotLabelMap m;
      m.height = probs.h;
      m.width = probs.w;
      m.channels = probs.matrix(i);
      out.push_back(std::move(m));
    }
  }
  return out;
}

OneHotLabelMap decode(Vae& model, const Eigen::VectorXd& z) {
  return decode_batch(model, z.transpose()).front();
}

VaeLoss vae_loss(const OneHotLabelMap& pred, const OneHotLabelMap& target, const LatentCode& code,
                 const VaeConfig& config) {
  if (pred.channels.cols() != target.channels.cols()) throw ShapeMismatchError("vae_loss: map sizes differ");
  if (code.mu.size() != code.log_var.size()) throw ShapeMismatchError("vae_loss: code sizes differ");
  nn::Tensor<double> p(1, kNumClasses, pred.height, pred.width), y(1, kNumClasses, target.height, target.width);
  p.matrix(0) = pred.channels.cast<double>();
  y.matrix(0) = target.channels.cast<double>();
  const auto weights = config.ce_class_weights.value_or(std::array<double, kNumClasses>{1, 1, 1, 1});
  VaeLoss loss;
  loss.ce = nn::weighted_cross_entropy(p, y, weights, config.ce_reduction, nullptr);
  const Eigen::MatrixXd mu = code.mu.transpose();
  const Eigen::MatrixXd lv = code.log_var.transpose();
  loss.kld = nn::kl_divergence(mu, lv);
  loss.total = loss.ce + config.beta * loss.kld;
  return loss;
}

TrainedVae train_vae(std::span<const OneHotLabelMap> dataset, VaeConfig config, const VaeProgress& progress) {
  if (dataset.empty()) throw InvalidArgumentError("train_vae: empty dataset");
  config.validate();
  for (const auto& m : dataset) {
    if (m.height != config.input_size || m.width != config.input_size) {
      throw ShapeMismatchError("train_vae: slice size does not match input_size");
    }
  }

  std::mt19937_64 rng(config.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = dataset.size() >= 10 ? static_cast<std::size_t>(std::lround(config.validation_fraction * dataset.size())) : 0;
  std::vector<OneHotLabelMap> train, val;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i + n_val < order.size() ? train : val).push_back(dataset[order[i]]);
  }
  if (val.empty()) val = train;

  if (!config.ce_class_weights) config.ce_class_weights = inverse_frequency_weights(train);
  const auto weights = *config.ce_class_weights;

  TrainedVae result;
  result.model = std::make_unique<Vae>(config);
  Vae& model = *result.model;
  auto params = model.parameters();
  nn::Adam<float> opt(params, {.lr = config.learning_rate});
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto val_tensor = stack_one_hot(val);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.final_learning_rate && config.epochs > 1) {
      const double t = double(epoch) / (config.epochs - 1);
      const double lo = *config.final_learning_rate, hi = config.learning_rate;
      opt.set_lr(lo + 0.5 * (hi - lo) * (1.0 + std::cos(std::numbers::pi * t)));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    VaeEpochRecord rec;
    rec.epoch = epoch;
    double seen = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, idx.size() - start);
      if (count < 2 && idx.size() >= 2) continue;  // batch norm needs more than one sample
      std::vector<OneHotLabelMap> batch;
      for (std::size_t k = 0; k < count; ++k) batch.push_back(train[idx[start + k]]);
      const auto x = stack_one_hot(batch);
      Eigen::MatrixXf noise(static_cast<Eigen::Index>(count), config.n_z);
      for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = gauss(rng);
      opt.zero_grad();
      const auto loss = model.forward_backward(x, noise, weights, true);
      if (!std::isfinite(loss.total)) {
        throw TrainingDivergedError("train_vae: non-finite loss at epoch " + std::to_string(epoch) +
                                    " (ce=" + std::to_string(loss.ce) + ", kld=" + std::to_string(loss.kld) + ")");
      }
      opt.step();
      rec.ce += loss.ce * count;
      rec.kld += loss.kld * count;
      rec.total += loss.total * count;
      seen += count;
    }
    if (seen > 0) {
      rec.ce /= seen;
      rec.kld /= seen;
      rec.total /= seen;
    }
    // Validation: eval-mode statistics, z = mu.
    double vce = 0.0, vtot = 0.0;
    for (int start = 0; start < val_tensor.n; start += 32) {
      const int count = std::min(32, val_tensor.n - start);
      nn::Tensor<float> chunk(count, kNumClasses, val_tensor.h, val_tensor.w);
      chunk.data = val_tensor.data.segment(start * val_tensor.sample_size(), count * val_tensor.sample_size());
      const Eigen::MatrixXf zero = Eigen::MatrixXf::Zero(count, config.n_z);
      const auto l = model.forward_backward(chunk, zero, weights, false, nn::Mode::Eval);
      vce += l.ce * count;
      vtot += l.total * count;
    }
    rec.val_ce = vce / val_tensor.n;
    rec.val_total = vtot / val_tensor.n;
    if (!std::isfinite(rec.val_total)) throw TrainingDivergedError("train_vae: non-finite validation loss at epoch " + std::to_string(epoch));
    result.log.push_back(rec);
    if (progress) progress(rec);
  }
  return result;
}

void save_vae(const std::filesystem::path& path, Vae& model) {
  nlohmann::json meta{{"kind", "label_vae"}, {"config", to_json(model.config())}, {"manifest", model.manifest()}};
  nn::write_checkpoint(path, meta, model.parameters());
}

std::unique_ptr<Vae> load_vae(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", "") != "label_vae") throw CorruptHeaderError(path.string() + " is not a label VAE checkpoint");
  auto model = std::make_unique<Vae>(vae_config_from_json(meta.at("config")));
  nn::read_checkpoint(path, model->parameters());
  return model;
}

void write_vae_log(const std::filesystem::path& path, const std::vector<VaeEpochRecord>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "epoch,ce,kld,total,val_ce,val_total\n";
  out.precision(10);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.ce << ',' << r.kld << ',' << r.total << ',' << r.val_ce << ',' << r.val_total << '\n';
  }
}

}  // namespace cmr
