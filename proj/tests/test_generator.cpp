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
#include <thread>

#include "doctest.h"

#include "cmr/gen/gan.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace cmr;
using TD = nn::Tensor<double>;

namespace {

TD random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  TD t(n, c, h, w);
  for (Eigen::Index k = 0; k < t.size(); ++k) t.data[k] = g(rng);
  return t;
}

// Random one-hot label tensor with blocky regions.
TD random_labels(int n, int size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cls(0, kNumClasses - 1);
  TD t(n, kNumClasses, size, size);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < size; y += 2)
      for (int x = 0; x < size; x += 2) {
        const int c = cls(rng);
        for (int dy = 0; dy < 2 && y + dy < size; ++dy)
          for (int dx = 0; dx < 2 && x + dx < size; ++dx) t(i, c, y + dy, x + dx) = 1.0;
      }
  return t;
}

// Loss <w, f(x)> for a fixed random projection w.
double project(const TD& y, const TD& w) { return y.data.dot(w.data); }

// Concentric toy anatomy with class intensities; \p bright shifts the blood pool.
ImagePair toy_pair(int size, double cx, double cy, double r, bool bright, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.03);
  std::vector<std::uint8_t> lab(static_cast<std::size_t>(size * size), 0);
  ImageSlice img(size, size);
  const double level[4] = {-0.4, 0.3, -0.8, bright ? 0.9 : 0.5};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double drv = std::hypot(x - (cx - 1.8 * r), y - cy);
      auto& v = lab[static_cast<std::size_t>(y * size + x)];
      if (d < r) v = 3;
      else if (d < 1.5 * r) v = 2;
      else if (drv < r) v = 1;
      img(y, x) = static_cast<float>(level[v] + noise(rng));
    }
  return {img, one_hot(lab, size, size)};
}

std::vector<ImagePair> toy_pairs(int size, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ImagePair> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(toy_pair(size, size * (0.55 + 0.1 * u(rng)), size * (0.45 + 0.1 * u(rng)), size * (0.12 + 0.05 * u(rng)),
                           i % 2 == 0, rng));
  }
  return out;
}

GanConfig toy_gan_config() {
  GanConfig c;
  c.image_size = 16;
  c.style_dim = 4;
  c.generator_width = 4;
  c.encoder_width = 2;
  c.discriminator_width = 4;
  c.spade_hidden = 4;
  c.epochs = 2;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("spade_modulate arithmetic") {
  SUBCASE("single pixel hand case") {
    TD h(1, 1, 1, 1), gamma(1, 1, 1, 1), beta(1, 1, 1, 1);
    h.data << 2.0;
    gamma.data << 3.0;
    beta.data << 0.5;
    const Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, 1.0), sd = Eigen::VectorXd::Constant(1, 1.0);
    CHECK(gen::spade_modulate(h, mean, sd, gamma, beta).data[0] == 3.5);
  }
  SUBCASE("unit modulation is batch standardisation") {
    std::mt19937_64 rng(1);
    TD h = random_tensor(3, 4, 5, 6, rng, 2.0);
    h.data.array() += 1.5;
    TD ones(3, 4, 5, 6), zeros(3, 4, 5, 6);
    ones.data.setOnes();
    const TD out = gen::spade_modulate(h, ones, zeros, 0.0);
    nn::BatchNorm2d<double> bn(4, false, 0.1, 0.0);
    const TD ref = bn.forward(h, nn::Mode::Train);
    CHECK((out.data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
    for (int c = 0; c < 4; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < 3; ++i) {
        s += out.matrix(i).row(c).sum();
        s2 += out.matrix(i).row(c).squaredNorm();
      }
      const double m = 90.0;
      CHECK(std::abs(s / m) < 1e-12);
      CHECK(std::abs(s2 / m - 1.0) < 1e-12);
    }
  }
  SUBCASE("shape errors") {
    TD h(1, 2, 3, 3), g(1, 2, 3, 4);
    CHECK_THROWS_AS(gen::spade_modulate(h, g, h), ShapeMismatchError);
  }
}

TEST_CASE("spade layer") {
  std::mt19937_64 rng(2);
  gen::Spade<double> spade(3, kNumClasses, 5, rng);
  const TD x = random_tensor(2, 3, 6, 6, rng);
  TD a = random_labels(2, 6, rng);

  SUBCASE("matches the functional form with its own modulation maps") {
    const TD y = spade.forward(x, a, nn::Mode::Train);
    const TD ref = gen::spade_modulate(x, spade.last_gamma(), spade.last_beta());
    CHECK((y.data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("output depends on the label map where labels differ") {
    const TD y0 = spade.forward(x, a, nn::Mode::Train);
    TD b = a;
    // Relabel one pixel of sample 0 far from the others' neighbourhoods.
    for (int c = 0; c < kNumClasses; ++c) b(0, c, 3, 3) = 0.0;
    b(0, (a(0, 0, 3, 3) > 0.5) ? 1 : 0, 3, 3) = 1.0;
    const TD y1 = spade.forward(x, b, nn::Mode::Train);
    double changed = 0.0, far = 0.0;
    for (int c = 0; c < 3; ++c) {
      changed += std::abs(y1(0, c, 3, 3) - y0(0, c, 3, 3));
      far += std::abs(y1(1, c, 3, 3) - y0(1, c, 3, 3)) + std::abs(y1(0, c, 0, 0) - y0(0, c, 0, 0));
    }
    CHECK(changed > 1e-3);
    CHECK(far == 0.0);
  }
  SUBCASE("label size must match") {
    CHECK_THROWS_AS(spade.forward(x, random_labels(2, 4, rng), nn::Mode::Train), ShapeMismatchError);
  }
  SUBCASE("gradient check") {
    const TD w = random_tensor(2, 3, 6, 6, rng);
    nn::ParameterList<double> params;
    spade.collect("spade.", params);
    auto loss = [&](bool backward) {
      const TD y = spade.forward(x, a, nn::Mode::Train);
      if (backward) spade.backward(w);
      return project(y, w);
    };
    const auto r = testing::check_parameter_gradients(params, loss);
    INFO(r.worst_name);
    CHECK(r.worst < 1e-3);

    TD xv = x;
    spade.forward(xv, a, nn::Mode::Train);
    const TD dx = spade.backward(w);
    const auto num = testing::numeric_gradient(xv.data, [&] { return project(spade.forward(xv, a, nn::Mode::Train), w); });
    CHECK(testing::relative_error(dx.data, num) < 1e-3);
  }
}

// Conv biases that feed a batch norm have an exactly zero gradient; the
// 1e-4 floor keeps finite-difference noise on them from dominating.
TEST_CASE("generator blocks gradient check") {
  std::mt19937_64 rng(3);
  SUBCASE("SPADE residual block with learned shortcut") {
    gen::SpadeResBlock<double> block(3, 2, kNumClasses, 4, 0.2, rng);
    const TD x = random_tensor(2, 3, 4, 4, rng);
    const TD a = random_labels(2, 4, rng);
    const TD w = random_tensor(2, 2, 4, 4, rng);
    nn::ParameterList<double> params;
    block.collect("b.", params);
    const auto r = testing::check_parameter_gradients(params, [&](bool backward) {
      const TD y = block.forward(x, a, nn::Mode::Train);
      if (backward) block.backward(w);
      return project(y, w);
    }, 1e-6, 1e-4);
    INFO(r.worst_name);
    CHECK(r.worst < 1e-3);
  }
  SUBCASE("style encoder") {
    gen::StyleEncoder<double> enc(2, 3, 0.2, rng);
    TD x = random_tensor(2, 1, 16, 16, rng);
    const TD w = random_tensor(2, 3, 1, 1, rng);
    nn::ParameterList<double> params;
    enc.collect("e.", params);
    const auto r = testing::check_parameter_gradients(params, [&](bool backward) {
      const TD y = enc.forward(x, nn::Mode::Train);
      if (backward) enc.backward(w);
      return project(y, w);
    });
    INFO(r.worst_name);
    CHECK(r.worst < 1e-3);
    enc.forward(x, nn::Mode::Train);
    const TD dx = enc.backward(w);
    const auto num = testing::numeric_gradient(x.data, [&] { return project(enc.forward(x, nn::Mode::Train), w); });
    CHECK(testing::relative_error(dx.data, num) < 1e-3);
  }
  SUBCASE("generator, including the style input") {
    gen::SpadeGenerator<double> g(16, 2, 3, kNumClasses, 3, 0.2, rng);
    const TD a = random_labels(3, 16, rng);
    TD s = random_tensor(3, 3, 1, 1, rng);
    const TD w = random_tensor(3, 1, 16, 16, rng);
    nn::ParameterList<double> params;
    g.collect("g.", params);
    const auto r = testing::check_parameter_gradients(params, [&](bool backward) {
      const TD y = g.forward(a, s, nn::Mode::Train);
      if (backward) g.backward(w);
      return project(y, w);
    }, 1e-6, 1e-4);
    INFO(r.worst_name);
    CHECK(r.worst < 1e-3);
    g.forward(a, s, nn::Mode::Train);
    const TD ds = g.backward(w);
    const auto num = testing::numeric_gradient(s.data, [&] { return project(g.forward(a, s, nn::Mode::Train), w); });
    CHECK(testing::relative_error(ds.data, num) < 1e-3);
  }
  SUBCASE("multi-scale discriminator with feature gradients") {
    gen::MultiScaleDiscriminator<double> d(2, 5, 2, 0.2, rng);
    TD x = random_tensor(2, 5, 16, 16, rng);
    auto out = d.forward(x);
    std::vector<TD> wl;
    std::vector<std::vector<TD>> wf(2);
    for (int s = 0; s < 2; ++s) {
      wl.push_back(random_tensor(out[s].logits.n, 1, out[s].logits.h, out[s].logits.w, rng));
      for (const auto& f : out[s].features) wf[s].push_back(random_tensor(f.n, f.c, f.h, f.w, rng));
    }
    auto value = [&] {
      const auto o = d.forward(x);
      double v = 0.0;
      for (int s = 0; s < 2; ++s) {
        v += project(o[s].logits, wl[s]);
        for (std::size_t k = 0; k < o[s].features.size(); ++k) v += project(o[s].features[k], wf[s][k]);
      }
      return v;
    };
    nn::ParameterList<double> params;
    d.collect("d.", params);
    const auto r = testing::check_parameter_gradients(params, [&](bool backward) {
      const double v = value();
      if (backward) d.backward(wl, wf);
      return v;
    });
    INFO(r.worst_name);
    CHECK(r.worst < 1e-3);
    value();
    const TD dx = d.backward(wl, wf);
    const auto num = testing::numeric_gradient(x.data, value);
    CHECK(testing::relative_error(dx.data, num) < 1e-3);
  }
}

TEST_CASE("inference contracts") {
  Gan model(toy_gan_config());
  const auto pairs = toy_pairs(16, 4, 7);
  SUBCASE("style codes are deterministic with style_dim entries") {
    const StyleCode a = style_encode(model, pairs[0].image);
    CHECK(a.size() == 4);
    CHECK(a == style_encode(model, pairs[0].image));
    CHECK(a.allFinite());
  }
  SUBCASE("outputs stay inside the tanh range") {
    StyleCode big = StyleCode::Constant(4, 1e4f);
    const ImageSlice img = generate(model, pairs[1].label, big);
    CHECK(img.rows() == 16);
    CHECK(img.minCoeff() >= -1.0f);
    CHECK(img.maxCoeff() <= 1.0f);
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(style_encode(model, ImageSlice::Zero(8, 8)), ShapeMismatchError);
    CHECK_THROWS_AS(generate(model, pairs[0].label, StyleCode::Zero(3)), ShapeMismatchError);
    OneHotLabelMap small = one_hot(std::vector<std::uint8_t>(64, 0), 8, 8);
    CHECK_THROWS_AS(generate(model, small, StyleCode::Zero(4)), ShapeMismatchError);
  }
  SUBCASE("synthesis needs a trained model") {
    Subject src;
    src.image = ImageVolume(2, 16, 16);
    src.labels = LabelVolume(2, 16, 16);
    CHECK_THROWS_AS(synthesize_subject(model, src.labels, src), UntrainedModelError);
  }
  SUBCASE("concurrent inference matches serial inference") {
    const StyleCode s = style_encode(model, pairs[0].image);
    std::vector<ImageSlice> serial;
    for (const auto& p : pairs) serial.push_back(generate(model, p.label, s));
    std::vector<ImageSlice> parallel(pairs.size());
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < pairs.size(); ++i) threads.emplace_back([&, i] { parallel[i] = generate(model, pairs[i].label, s); });
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(parallel[i] == serial[i]);
  }
}

TEST_CASE("config validation and json") {
  GanConfig c = toy_gan_config();
  CHECK(gan_config_from_json(to_json(c)).style_dim == 4);
  CHECK(to_json(c).at("adversarial_loss") == "hinge");
  c.style_dim = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
  c = toy_gan_config();
  c.image_size = 24;
  CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
  c = toy_gan_config();
  c.discriminator_scales = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
}

TEST_CASE("training, checkpoints and subject synthesis") {
  const auto pairs = toy_pairs(16, 12, 9);
  const auto first = train_gan(pairs, toy_gan_config());
  const auto second = train_gan(pairs, toy_gan_config());
  REQUIRE(first.log.size() == 2);
  CHECK(first.log[0].g_total == second.log[0].g_total);
  CHECK(first.log[0].d_real == second.log[0].d_real);
  CHECK(first.log[0].d_accuracy >= 0.0);
  CHECK(first.log[0].d_accuracy <= 1.0);
  CHECK(first.log[0].g_l1 > 0.0);
  Gan& model = *first.model;
  CHECK(model.trained());

  SUBCASE("non-finite data aborts") {
    auto bad = pairs;
    bad[0].image(0, 0) = std::nanf("");
    GanConfig c = toy_gan_config();
    c.batch_size = 12;
    CHECK_THROWS_AS(train_gan(bad, c), TrainingDivergedError);
  }
  SUBCASE("empty dataset") {
    CHECK_THROWS_AS(train_gan({}, toy_gan_config()), InvalidArgumentError);
  }
  SUBCASE("checkpoint round trip reproduces generation") {
    testing::TempDir dir;
    save_gan(dir.path() / "gan.ckpt", model);
    auto loaded = load_gan(dir.path() / "gan.ckpt");
    CHECK(loaded->trained());
    CHECK(loaded->config().generator_width == 4);
    const StyleCode s = style_encode(model, pairs[0].image);
    CHECK(style_encode(*loaded, pairs[0].image) == s);
    CHECK(generate(*loaded, pairs[1].label, s) == generate(model, pairs[1].label, s));
    write_gan_log(dir.path() / "log.csv", first.log);
    std::ifstream in(dir.path() / "log.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,g_adv,g_fm,g_l1,g_total,d_real,d_fake,d_accuracy");
  }
  SUBCASE("subject synthesis") {
    Subject src;
    src.image = ImageVolume(3, 16, 16);
    src.labels = LabelVolume(3, 16, 16);
    src.spacing = {1.5, 1.5, 10.0};
    src.meta.subject_id = "style";
    for (int s = 0; s < 3; ++s) {
      const auto& img = pairs[s].image;
      std::copy_n(img.data(), img.size(), src.image.slice(s).data());
    }
    LabelVolume labels(32, 16, 16);
    for (int s = 0; s < 32; ++s) {
      const auto lab = argmax(pairs[s % 12].label);
      std::copy(lab.begin(), lab.end(), labels.slice(s).begin());
    }
    const Subject out = synthesize_subject(model, labels, src);
    CHECK(out.image.slices() == 32);
    CHECK(out.labels == labels);
    CHECK(out.spacing.slice_mm == doctest::Approx(10.0 * 3 / 32));
    CHECK(out.meta.subject_id == "style");
    // Slice 10 sits at normalised position 10/31 -> source slice round(0.645) = 1.
    const ImageSlice expect = generate(model, one_hot(labels, 10), style_encode(model, pairs[1].image));
    CHECK(image_slice(out.image, 10) == expect);
    const ImageSlice last = generate(model, one_hot(labels, 31), style_encode(model, pairs[2].image));
    CHECK(image_slice(out.image, 31) == last);
  }
  SUBCASE("class mean intensities") {
    const auto m = class_mean_intensities(pairs[0].image, pairs[0].label);
    CHECK(m[2] == doctest::Approx(-0.8).epsilon(0.05));
    CHECK(m[3] == doctest::Approx(0.9).epsilon(0.05));
  }
}
