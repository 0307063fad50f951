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

#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"

#include "cmr/vae.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace cmr;

namespace {

// Disc of class 3 inside a ring of class 2, with a class-1 blob to the left.
OneHotLabelMap toy_map(int size, double cx, double cy, double r) {
  std::vector<std::uint8_t> lab(static_cast<std::size_t>(size * size), 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double drv = std::hypot(x - (cx - 1.8 * r), y - cy);
      auto& v = lab[static_cast<std::size_t>(y * size + x)];
      if (d < r) v = 3;
      else if (d < 1.5 * r) v = 2;
      else if (drv < r) v = 1;
    }
  }
  return one_hot(lab, size, size);
}

std::vector<OneHotLabelMap> toy_dataset(int size, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<OneHotLabelMap> maps;
  for (int i = 0; i < count; ++i) {
    const double r = size * (0.1 + 0.06 * u(rng));
    maps.push_back(toy_map(size, size * (0.55 + 0.1 * u(rng)), size * (0.45 + 0.1 * u(rng)), r));
  }
  return maps;
}

VaeConfig tiny_config() {
  VaeConfig c;
  c.n_z = 2;
  c.input_size = 8;
  c.widths = {2, 2, 2, 2};
  c.strides = {2, 2, 1, 1};
  c.fc_hidden = {4, 4, 4};
  c.ce_class_weights = std::array<double, kNumClasses>{0.5, 1.5, 1.2, 0.8};
  c.seed = 3;
  return c;
}

VaeConfig small_config() {
  VaeConfig c;
  c.input_size = 16;
  c.widths = {4, 8, 8, 8};
  c.strides = {2, 2, 2, 1};
  c.fc_hidden = {32, 32, 32};
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.epochs = 30;
  c.seed = 11;
  return c;
}

double kld_oracle(const Eigen::VectorXd& mu, const Eigen::VectorXd& lv) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < mu.size(); ++j) s += 1.0 + lv[j] - mu[j] * mu[j] - std::exp(lv[j]);
  return -0.5 * s;
}

}  // namespace

TEST_CASE("kl divergence closed forms") {
  VaeConfig cfg;
  const auto target = toy_map(128, 64, 64, 12);
  LatentCode code{Eigen::VectorXd::Zero(16), Eigen::VectorXd::Zero(16)};
  CHECK(vae_loss(target, target, code, cfg).kld == doctest::Approx(0.0));
  code.mu[0] = 1.0;
  CHECK(vae_loss(target, target, code, cfg).kld == doctest::Approx(0.5));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    for (int j = 0; j < 16; ++j) {
      code.mu[j] = g(rng);
      code.log_var[j] = g(rng);
    }
    const double k = vae_loss(target, target, code, cfg).kld;
    CHECK(k >= 0.0);
    CHECK(k == doctest::Approx(kld_oracle(code.mu, code.log_var)).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy vanishes for perfect predictions") {
  VaeConfig cfg;
  cfg.ce_class_weights = std::array<double, kNumClasses>{1, 1, 1, 1};
  const auto target = toy_map(128, 60, 70, 15);
  const LatentCode code{Eigen::VectorXd::Zero(16), Eigen::VectorXd::Zero(16)};
  double prev = 1e300;
  for (double eps : {1e-1, 1e-3, 1e-6}) {
    OneHotLabelMap pred = target;
    pred.channels = (target.channels.array() * (1.0f - 4.0f * float(eps)) + float(eps)).matrix();
    const auto loss = vae_loss(pred, target, code, cfg);
    CHECK(loss.ce < prev);
    prev = loss.ce;
    CHECK(loss.total == doctest::Approx(loss.ce + cfg.beta * loss.kld));
  }
  CHECK(prev < 1e-3 * 128 * 128 * 1e-2);
  cfg.ce_reduction = nn::Reduction::Mean;
  OneHotLabelMap pred = target;
  pred.channels = (target.channels.array() * 0.96f + 0.01f).matrix();
  CHECK(vae_loss(pred, target, code, cfg).ce == doctest::Approx(-std::log(0.97)).epsilon(1e-5));
}

TEST_CASE("reparameterize") {
  LatentCode code{Eigen::VectorXd::LinSpaced(16, -1.0, 1.0), Eigen::VectorXd::Zero(16)};
  CHECK(reparameterize(code, Eigen::VectorXd::Zero(16)) == code.mu);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(16);
  e1[0] = 1.0;
  CHECK((reparameterize(code, e1) - (code.mu + e1)).norm() < 1e-15);
  CHECK_THROWS_AS(reparameterize(code, Eigen::VectorXd::Zero(3)), ShapeMismatchError);

  code.log_var = Eigen::VectorXd::LinSpaced(16, -2.0, 1.0);
  const Eigen::ArrayXd sigma = (0.5 * code.log_var.array()).exp();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(16), noise(16);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 16; ++j) noise[j] = g(rng);
    sum += reparameterize(code, noise);
  }
  const Eigen::ArrayXd dev = (sum / n - code.mu).array().abs();
  CHECK((dev <= 3.0 * sigma / std::sqrt(double(n))).all());
}

TEST_CASE("architecture manifest") {
  Vae model(VaeConfig{});
  const auto lines = model.manifest();
  auto count = [&](const std::string& prefix, const std::string& kind) {
    int k = 0;
    for (const auto& l : lines)
      if (l.rfind(prefix, 0) == 0 && l.find(": " + kind) != std::string::npos) ++k;
    return k;
  };
  for (int b = 0; b < 4; ++b) {
    const std::string p = "encoder.block" + std::to_string(b) + ".";
    CHECK(count(p, "Conv2d") == 3);
    CHECK(count(p, "BatchNorm2d") == 3);
    CHECK(count(p, "LeakyReLU") == 3);
    const std::string d = "decoder.block" + std::to_string(b) + ".";
    CHECK(count(d, "Upsample") == 1);
    CHECK(count(d, "Conv2d") == 2);
    CHECK(count(d, "BatchNorm2d") == 2);
    CHECK(count(d, "LeakyReLU") == 2);
  }
  CHECK(count("encoder.fc", "Linear") == 4);
  CHECK(count("decoder.final.", "Conv2d") == 2);
  CHECK(count("decoder.final.", "BatchNorm2d") == 1);
  CHECK(lines.back() == "decoder.final.conv1: Conv2d(32->4,k3,s1,p1)");
  CHECK(std::find(lines.begin(), lines.end(), "encoder.fc3: Linear(64->32)") != lines.end());
  CHECK(std::find(lines.begin(), lines.end(), "decoder.reshape: Reshape(256x8x8)") != lines.end());
  CHECK(VaeConfig{}.bottleneck_size() == 8);
}

TEST_CASE("encode and decode contracts") {
  VaeConfig cfg;
  cfg.widths = {8, 16, 32, 64};
  Vae model(cfg);
  const auto x = toy_map(128, 70, 60, 14);
  const auto a = encode(model, x);
  const auto b = encode(model, x);
  CHECK(a.mu.size() == 16);
  CHECK(a.mu == b.mu);
  CHECK(a.log_var == b.log_var);
  CHECK(a.mu.allFinite());
  CHECK(a.log_var.allFinite());

  const auto p = decode(model, a.mu);
  CHECK(p.height == 128);
  CHECK(p.width == 128);
  const Eigen::RowVectorXf sums = p.channels.colwise().sum();
  CHECK((sums.array() - 1.0f).abs().maxCoeff() < 1e-5f);
  CHECK(p.channels.minCoeff() > 0.0f);
  CHECK(p.channels.maxCoeff() < 1.0f);

  Eigen::VectorXd dz = Eigen::VectorXd::Ones(16);
  const auto q = decode(model, a.mu + dz * (1e-3 / dz.norm()));
  CHECK((q.channels - p.channels).cwiseAbs().maxCoeff() < 0.1f);

  CHECK_THROWS_AS(decode(model, Eigen::VectorXd::Zero(5)), ShapeMismatchError);
  CHECK_THROWS_AS(encode(model, toy_map(64, 32, 32, 8)), ShapeMismatchError);
  nn::Tensor<float> three(1, 3, 128, 128);
  CHECK_THROWS_AS(model.encode(three, nn::Mode::Eval), ShapeMismatchError);
}

TEST_CASE("tiny model gradient check") {
  LabelVae<double> model(tiny_config());
  const auto maps = toy_dataset(8, 3, 2);
  nn::Tensor<double> x = stack_one_hot(maps).cast<double>();
  Eigen::MatrixXd noise(3, 2);
  noise << 0.3, -1.1, 0.7, 0.2, -0.5, 1.4;
  const auto w = *model.config().ce_class_weights;
  auto params = model.parameters();
  // Conv biases feeding batch norm have an exactly zero gradient; the floor
  // keeps finite-difference noise on them from counting as error.
  auto loss = [&](bool grad) { return model.forward_backward(x, noise, w, grad).total; };
  const auto res = testing::check_parameter_gradients(params, loss, 1e-6, 1e-6);
  CHECK_MESSAGE(res.worst < 1e-3, "worst tensor " << res.worst_name << " err " << res.worst);

  model.config().ce_reduction = nn::Reduction::Mean;
  const auto res_mean = testing::check_parameter_gradients(params, loss, 1e-6, 1e-6);
  CHECK_MESSAGE(res_mean.worst < 1e-3, "worst tensor " << res_mean.worst_name << " err " << res_mean.worst);
}

TEST_CASE("config validation and json") {
  VaeConfig c;
  c.n_z = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
  c = {};
  c.beta = -1;
  CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
  c = {};
  c.strides = {2, 2, 2, 3};
  CHECK_THROWS_AS(c.validate(), InvalidArgumentError);

  c = small_config();
  c.ce_class_weights = std::array<double, kNumClasses>{0.1, 2, 3, 4};
  const auto back = vae_config_from_json(to_json(c));
  CHECK(back.widths == c.widths);
  CHECK(back.strides == c.strides);
  CHECK(back.ce_class_weights == c.ce_class_weights);
  CHECK(back.learning_rate == c.learning_rate);
  nlohmann::json j = to_json(c);
  j["ce_class_weights"] = {1, 2};
  CHECK_THROWS_AS(vae_config_from_json(j), InvalidArgumentError);
}

TEST_CASE("inverse frequency weights") {
  const auto maps = toy_dataset(32, 4, 9);
  std::array<double, kNumClasses> counts{};
  for (const auto& m : maps)
    for (auto v : argmax(m)) counts[v] += 1;
  const auto w = inverse_frequency_weights(maps);
  const double pixels = counts[0] + counts[1] + counts[2] + counts[3];
  CHECK((w[0] * counts[0] + w[1] * counts[1] + w[2] * counts[2] + w[3] * counts[3]) / pixels == doctest::Approx(1.0));
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) CHECK(w[a] * counts[a] == doctest::Approx(w[b] * counts[b]));
}

TEST_CASE("training behaviour on toy maps") {
  const auto data = toy_dataset(16, 48, 21);
  CHECK_THROWS_AS(train_vae({}, small_config()), InvalidArgumentError);

  auto cfg = small_config();
  cfg.epochs = 1;
  const auto a = train_vae(data, cfg);
  const auto b = train_vae(data, cfg);
  REQUIRE(a.log.size() == 1);
  CHECK(a.log[0].total == b.log[0].total);
  CHECK(std::isfinite(a.log[0].val_total));

  cfg.epochs = 40;
  cfg.beta = 15;
  const auto kl = train_vae(data, cfg);
  cfg.beta = 0;
  const auto plain = train_vae(data, cfg);
  CHECK(plain.log.back().ce < kl.log.back().ce);

  // Validation total is non-increasing over 20-epoch windows within 5%.
  for (std::size_t e = 20; e < kl.log.size(); ++e) {
    CHECK(kl.log[e].val_total <= 1.05 * kl.log[e - 20].val_total);
  }
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  auto cfg = small_config();
  cfg.epochs = 2;
  const auto data = toy_dataset(16, 12, 4);
  auto trained = train_vae(data, cfg);
  const auto path = dir.path() / "vae.ckpt";
  save_vae(path, *trained.model);
  auto loaded = load_vae(path);
  CHECK(loaded->config().ce_class_weights == trained.model->config().ce_class_weights);
  CHECK(loaded->manifest() == trained.model->manifest());
  const auto x = data[3];
  CHECK(encode(*loaded, x).mu == encode(*trained.model, x).mu);

  write_vae_log(dir.path() / "log.csv", trained.log);
  std::ifstream in(dir.path() / "log.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,ce,kld,total,val_ce,val_total");
}
