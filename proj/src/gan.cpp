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

#include "cmr/gen/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "cmr/nn/checkpoint.hpp"
#include "cmr/nn/optim.hpp"

namespace cmr {
namespace {

using Tensor = nn::Tensor<float>;

nn::Tensor<float> stack_labels(std::span<const ImagePair> pairs) {
  std::vector<OneHotLabelMap> maps;
  maps.reserve(pairs.size());
  for (const auto& p : pairs) maps.push_back(p.label);
  Tensor t(static_cast<int>(maps.size()), kNumClasses, maps[0].height, maps[0].width);
  for (std::size_t i = 0; i < maps.size(); ++i) t.matrix(static_cast<int>(i)) = maps[i].channels;
  return t;
}

nn::Tensor<float> stack_pair_images(std::span<const ImagePair> pairs) {
  std::vector<ImageSlice> images;
  images.reserve(pairs.size());
  for (const auto& p : pairs) images.push_back(p.image);
  return stack_images(images);
}

// Mean over scales of the per-image patch-mean logit.
Eigen::VectorXd image_scores(const std::vector<gen::MultiScaleDiscriminator<float>::Output>& out) {
  Eigen::VectorXd score = Eigen::VectorXd::Zero(out[0].logits.n);
  for (const auto& o : out)
    for (int i = 0; i < o.logits.n; ++i) score[i] += o.logits.matrix(i).mean();
  return score / double(out.size());
}

// Hinge loss mean(relu(1 - sign * logits)); the gradient goes to \p grad.
double hinge(const Tensor& logits, float sign, Tensor& grad) {
  grad = Tensor(logits.n, logits.c, logits.h, logits.w);
  const float inv = 1.0f / float(logits.size());
  double loss = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const float m = 1.0f - sign * logits.data[k];
    if (m > 0.0f) {
      loss += m;
      grad.data[k] = -sign * inv;
    }
  }
  return loss / double(logits.size());
}

// weight * mean|a - b| with its gradient with respect to a.
double l1(const Tensor& a, const Tensor& b, double weight, Tensor& grad) {
  grad = Tensor::uninitialized(a.n, a.c, a.h, a.w);
  const float scale = float(weight / double(a.size()));
  const auto diff = (a.data - b.data).array();
  grad.data = diff.sign() * scale;
  return weight * diff.abs().template cast<double>().mean();
}

void check_pairs(std::span<const ImagePair> pairs, int size) {
  for (const auto& p : pairs) {
    if (p.image.rows() != size || p.image.cols() != size || p.label.height != size || p.label.width != size) {
      throw ShapeMismatchError("gan: pairs must be " + std::to_string(size) + "x" + std::to_string(size));
    }
  }
}

}  // namespace

ImageSlice image_slice(const ImageVolume& volume, int slice) {
  if (slice < 0 || slice >= volume.slices()) throw InvalidArgumentError("image_slice: slice index out of range");
  return Eigen::Map<const ImageSlice>(volume.slice(slice).data(), volume.rows(), volume.cols());
}

std::vector<ImagePair> slice_pairs(const Subject& subject) {
  check_subject(subject);
  std::vector<ImagePair> out;
  for (int s = 0; s < subject.image.slices(); ++s) out.push_back({image_slice(subject.image, s), one_hot(subject.labels, s)});
  return out;
}

void GanConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) throw InvalidArgumentError("GanConfig: image_size must be a positive multiple of 16");
  if (style_dim < 1 || generator_width < 1 || encoder_width < 1 || discriminator_width < 1 || spade_hidden < 1) {
    throw InvalidArgumentError("GanConfig: dimensions must be positive");
  }
  if (discriminator_scales < 1 || (image_size >> (discriminator_scales - 1)) < 8) {
    throw InvalidArgumentError("GanConfig: too many discriminator scales for the image size");
  }
  if (!(lambda_feature_matching >= 0.0) || !(lambda_l1 >= 0.0)) throw InvalidArgumentError("GanConfig: loss weights must be non-negative");
  if (epochs < 0 || batch_size < 1 || !(generator_lr > 0.0) || !(discriminator_lr > 0.0)) {
    throw InvalidArgumentError("GanConfig: invalid training scalars");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgumentError("GanConfig: Adam betas must lie in [0,1)");
}

nlohmann::json to_json(const GanConfig& c) {
  return {{"image_size", c.image_size},
          {"style_dim", c.style_dim},
          {"generator_width", c.generator_width},
          {"encoder_width", c.encoder_width},
          {"discriminator_width", c.discriminator_width},
          {"spade_hidden", c.spade_hidden},
          {"discriminator_scales", c.discriminator_scales},
          {"leaky_slope", c.leaky_slope},
          {"lambda_feature_matching", c.lambda_feature_matching},
          {"lambda_l1", c.lambda_l1},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"generator_lr", c.generator_lr},
          {"discriminator_lr", c.discriminator_lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"seed", c.seed},
          {"adversarial_loss", "hinge"},
          {"style_injection", "style code tiled and concatenated with the label map at the initial block"}};
}

GanConfig gan_config_from_json(const nlohmann::json& j) {
  GanConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.style_dim = j.value("style_dim", c.style_dim);
  c.generator_width = j.value("generator_width", c.generator_width);
  c.encoder_width = j.value("encoder_width", c.encoder_width);
  c.discriminator_width = j.value("discriminator_width", c.discriminator_width);
  c.spade_hidden = j.value("spade_hidden", c.spade_hidden);
  c.discriminator_scales = j.value("discriminator_scales", c.discriminator_scales);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.lambda_feature_matching = j.value("lambda_feature_matching", c.lambda_feature_matching);
  c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.generator_lr = j.value("generator_lr", c.generator_lr);
  c.discriminator_lr = j.value("discriminator_lr", c.discriminator_lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nn::Tensor<float> stack_images(std::span<const ImageSlice> images) {
  if (images.empty()) throw InvalidArgumentError("stack_images: no images");
  const auto rows = images[0].rows(), cols = images[0].cols();
  Tensor t(static_cast<int>(images.size()), 1, static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rows() != rows || images[i].cols() != cols) throw ShapeMismatchError("stack_images: mixed sizes");
    t.matrix(static_cast<int>(i)) = images[i].reshaped<Eigen::RowMajor>().transpose();
  }
  return t;
}

StyleCode style_encode(Gan& model, const ImageSlice& image) {
  const int s = model.config().image_size;
  if (image.rows() != s || image.cols() != s) throw ShapeMismatchError("style_encode: expected a " + std::to_string(s) + "x" + std::to_string(s) + " image");
  std::lock_guard lock(model.inference_mutex());
  const auto code = model.encoder().forward(stack_images(std::span(&image, 1)), nn::Mode::Eval);
  return code.matrix(0).col(0);
}

std::vector<ImageSlice> generate_batch(Gan& model, std::span<const OneHotLabelMap> labels, const Eigen::MatrixXf& styles) {
  const int s = model.config().image_size;
  if (styles.rows() != static_cast<Eigen::Index>(labels.size()) || styles.cols() != model.config().style_dim) {
    throw ShapeMismatchError("generate: need one style code of length " + std::to_string(model.config().style_dim) + " per label map");
  }
  for (const auto& l : labels) {
    if (l.height != s || l.width != s || l.channels.rows() != kNumClasses) throw ShapeMismatchError("generate: label map must be 4x" + std::to_string(s) + "x" + std::to_string(s));
  }
  std::vector<ImageSlice> out;
  out.reserve(labels.size());
  std::lock_guard lock(model.inference_mutex());
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < labels.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, labels.size() - start);
    Tensor y(static_cast<int>(count), kNumClasses, s, s), z(static_cast<int>(count), model.config().style_dim, 1, 1);
    for (std::size_t i = 0; i < count; ++i) {
      y.matrix(static_cast<int>(i)) = labels[start + i].channels;
      z.matrix(static_cast<int>(i)) = styles.row(static_cast<Eigen::Index>(start + i)).transpose();
    }
    const Tensor img = model.generator().forward(y, z, nn::Mode::Eval);
    for (int i = 0; i < img.n; ++i) out.push_back(Eigen::Map<const ImageSlice>(img.sample(i), s, s));
  }
  return out;
}

ImageSlice generate(Gan& model, const OneHotLabelMap& label, const StyleCode& style) {
  if (style.size() != model.config().style_dim) throw ShapeMismatchError("generate: style code length mismatch");
  return generate_batch(model, std::span(&label, 1), style.transpose()).front();
}

TrainedGan train_gan(std::span<const ImagePair> dataset, GanConfig config, const GanProgress& progress) {
  if (dataset.empty()) throw InvalidArgumentError("train_gan: empty dataset");
  config.validate();
  check_pairs(dataset, config.image_size);

  TrainedGan result;
  result.model = std::make_unique<Gan>(config);
  Gan& model = *result.model;
  auto& enc = model.encoder();
  auto& gen = model.generator();
  auto& disc = model.discriminator();
  nn::Adam<float> gopt(model.generator_parameters(),
                       {.lr = config.generator_lr, .beta1 = config.beta1, .beta2 = config.beta2});
  nn::Adam<float> dopt(model.discriminator_parameters(),
                       {.lr = config.discriminator_lr, .beta1 = config.beta1, .beta2 = config.beta2});

  std::mt19937_64 rng(config.seed ^ 0x9a17ULL);
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  const int scales = disc.scales();
  const double fm_weight = config.lambda_feature_matching / scales;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    GanEpochRecord rec;
    rec.epoch = epoch;
    double seen = 0.0, correct = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, idx.size() - start);
      if (count < 2 && idx.size() >= 2) continue;  // batch statistics need two samples
      std::vector<ImagePair> batch;
      for (std::size_t k = 0; k < count; ++k) batch.push_back(dataset[idx[start + k]]);
      const Tensor x = stack_pair_images(batch);
      const Tensor y = stack_labels(batch);

      const Tensor style = enc.forward(x, nn::Mode::Train);
      const Tensor fake = gen.forward(y, style, nn::Mode::Train);
      const Tensor real_in = nn::concat_channels(x, y);
      const Tensor fake_in = nn::concat_channels(fake, y);

      // Discriminator step.
      dopt.zero_grad();
      double d_real = 0.0, d_fake = 0.0;
      std::vector<Tensor> dl(scales);
      auto out = disc.forward(real_in);
      for (int s = 0; s < scales; ++s) d_real += hinge(out[s].logits, 1.0f, dl[s]);
      correct += (image_scores(out).array() > 0.0).count();
      disc.backward(dl, {});
      out = disc.forward(fake_in);
      for (int s = 0; s < scales; ++s) d_fake += hinge(out[s].logits, -1.0f, dl[s]);
      correct += (image_scores(out).array() < 0.0).count();
      disc.backward(dl, {});
      dopt.step();

      // Generator step against the updated discriminator.
      gopt.zero_grad();
      const auto real_out = disc.forward(real_in);
      const auto fake_out = disc.forward(fake_in);
      double g_adv = 0.0, g_fm = 0.0;
      std::vector<std::vector<Tensor>> dfeat(scales);
      for (int s = 0; s < scales; ++s) {
        const auto& logits = fake_out[s].logits;
        g_adv -= logits.data.template cast<double>().mean();
        dl[s] = Tensor(logits.n, logits.c, logits.h, logits.w);
        dl[s].data.setConstant(-1.0f / float(logits.size()));
        for (std::size_t k = 0; k < fake_out[s].features.size(); ++k) {
          Tensor g;
          g_fm += l1(fake_out[s].features[k], real_out[s].features[k], fm_weight, g);
          dfeat[s].push_back(std::move(g));
        }
      }
      Tensor dimage, dlabel;
      nn::split_channels(disc.backward(dl, dfeat), 1, dimage, dlabel);
      Tensor dl1;
      const double g_l1 = l1(fake, x, config.lambda_l1, dl1);
      dimage.data += dl1.data;
      enc.backward(gen.backward(dimage));
      const double g_total = g_adv + g_fm + g_l1;
      if (!std::isfinite(g_total) || !std::isfinite(d_real + d_fake)) {
        throw TrainingDivergedError("train_gan: non-finite loss at epoch " + std::to_string(epoch) +
                                    " (g=" + std::to_string(g_total) + ", d_real=" + std::to_string(d_real) +
                                    ", d_fake=" + std::to_string(d_fake) + ")");
      }
      gopt.step();

      rec.g_adv += g_adv * count;
      rec.g_fm += g_fm * count;
      rec.g_l1 += g_l1 * count;
      rec.g_total += g_total * count;
      rec.d_real += d_real * count;
      rec.d_fake += d_fake * count;
      seen += count;
    }
    if (seen > 0) {
      for (double* v : {&rec.g_adv, &rec.g_fm, &rec.g_l1, &rec.g_total, &rec.d_real, &rec.d_fake}) *v /= seen;
      rec.d_accuracy = correct / (2.0 * seen);
    }
    result.log.push_back(rec);
    if (progress) progress(rec);
  }
  model.set_trained(true);
  return result;
}

double discriminator_accuracy(Gan& model, std::span<const ImagePair> pairs) {
  if (pairs.empty()) throw InvalidArgumentError("discriminator_accuracy: no pairs");
  check_pairs(pairs, model.config().image_size);
  std::lock_guard lock(model.inference_mutex());
  double correct = 0.0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const auto chunk = pairs.subspan(start, std::min(kChunk, pairs.size() - start));
    const Tensor x = stack_pair_images(chunk);
    const Tensor y = stack_labels(chunk);
    const Tensor fake = model.generator().forward(y, model.encoder().forward(x, nn::Mode::Eval), nn::Mode::Eval);
    correct += (image_scores(model.discriminator().forward(nn::concat_channels(x, y))).array() > 0.0).count();
    correct += (image_scores(model.discriminator().forward(nn::concat_channels(fake, y))).array() < 0.0).count();
  }
  return correct / (2.0 * pairs.size());
}

std::array<double, kNumClasses> class_mean_intensities(const ImageSlice& image, const OneHotLabelMap& label) {
  if (image.rows() != label.height || image.cols() != label.width) throw ShapeMismatchError("class_mean_intensities: size mismatch");
  const auto cls = argmax(label);
  std::array<double, kNumClasses> sum{}, count{};
  for (std::size_t k = 0; k < cls.size(); ++k) {
    sum[cls[k]] += image.data()[k];
    count[cls[k]] += 1.0;
  }
  std::array<double, kNumClasses> mean{};
  for (int c = 0; c < kNumClasses; ++c) mean[c] = count[c] > 0 ? sum[c] / count[c] : std::numeric_limits<double>::quiet_NaN();
  return mean;
}

Subject synthesize_subject(Gan& model, const LabelVolume& labels, const Subject& style_source) {
  if (!model.trained()) throw UntrainedModelError("synthesize_subject: generator has not been trained or loaded");
  if (style_source.image.slices() < 1) throw InvalidArgumentError("synthesize_subject: style source has no slices");
  const int size = model.config().image_size;
  if (labels.rows() != size || labels.cols() != size || style_source.image.rows() != size || style_source.image.cols() != size) {
    throw ShapeMismatchError("synthesize_subject: labels and style source must be " + std::to_string(size) + "x" + std::to_string(size));
  }
  if (labels.slices() < 1) throw InvalidArgumentError("synthesize_subject: empty label volume");
  check_label_domain(labels);

  const int n = labels.slices(), src = style_source.image.slices();
  std::map<int, StyleCode> cache;
  Eigen::MatrixXf styles(n, model.config().style_dim);
  std::vector<OneHotLabelMap> maps;
  for (int i = 0; i < n; ++i) {
    const int j = n == 1 ? 0 : static_cast<int>(std::lround(double(i) * (src - 1) / (n - 1)));
    auto it = cache.find(j);
    if (it == cache.end()) it = cache.emplace(j, style_encode(model, image_slice(style_source.image, j))).first;
    styles.row(i) = it->second.transpose();
    maps.push_back(one_hot(labels, i));
  }
  const auto images = generate_batch(model, maps, styles);

  Subject out;
  out.meta = style_source.meta;
  out.spacing = style_source.spacing;
  out.spacing.slice_mm = style_source.spacing.slice_mm * src / n;
  out.labels = labels;
  out.image = ImageVolume(n, size, size);
  for (int i = 0; i < n; ++i) std::copy_n(images[i].data(), images[i].size(), out.image.slice(i).data());
  return out;
}

void save_gan(const std::filesystem::path& path, Gan& model) {
  nlohmann::json meta{{"kind", "spade_gan"}, {"config", to_json(model.config())}, {"trained", model.trained()},
                      {"manifest", model.manifest()}};
  nn::write_checkpoint(path, meta, model.parameters());
}

std::unique_ptr<Gan> load_gan(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", "") != "spade_gan") throw CorruptHeaderError(path.string() + " is not a GAN checkpoint");
  auto model = std::make_unique<Gan>(gan_config_from_json(meta.at("config")));
  nn::read_checkpoint(path, model->parameters());
  model->set_trained(meta.value("trained", false));
  return model;
}

void write_gan_log(const std::filesystem::path& path, const std::vector<GanEpochRecord>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "epoch,g_adv,g_fm,g_l1,g_total,d_real,d_fake,d_accuracy\n";
  out.precision(10);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.g_adv << ',' << r.g_fm << ',' << r.g_l1 << ',' << r.g_total << ',' << r.d_real << ','
        << r.d_fake << ',' << r.d_accuracy << '\n';
  }
}

}  // namespace cmr
