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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "cmr/gen/spade.hpp"
#include "cmr/preprocess.hpp"

namespace cmr {

/// One image plane, rows x cols, row-major like the volume slices.
using ImageSlice = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StyleCode = Eigen::VectorXf;

struct ImagePair {
  ImageSlice image;
  OneHotLabelMap label;
};

ImageSlice image_slice(const ImageVolume& volume, int slice);
/// Every slice of a conforming subject as an (image, one-hot label) pair.
std::vector<ImagePair> slice_pairs(const Subject& subject);

struct GanConfig {
  int image_size = 128;
  int style_dim = 64;
  int generator_width = 32;
  int encoder_width = 32;
  int discriminator_width = 32;
  int spade_hidden = 64;
  int discriminator_scales = 2;
  double leaky_slope = 0.2;

  double lambda_feature_matching = 10.0;
  /// Weight of the pixelwise L1 reconstruction term against the paired real image.
  double lambda_l1 = 10.0;

  int epochs = 50;
  int batch_size = 8;
  double generator_lr = 1e-4;
  double discriminator_lr = 4e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const GanConfig& config);
GanConfig gan_config_from_json(const nlohmann::json& j);

/// Style encoder, SPADE generator and multi-scale discriminator.
template <typename Scalar>
class SpadeGan {
 public:
  using T = nn::Tensor<Scalar>;

  explicit SpadeGan(GanConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const double slope = config_.leaky_slope;
    encoder_ = std::make_unique<gen::StyleEncoder<Scalar>>(config_.encoder_width, config_.style_dim, slope, rng);
    generator_ = std::make_unique<gen::SpadeGenerator<Scalar>>(config_.image_size, config_.generator_width,
                                                               config_.style_dim, kNumClasses, config_.spade_hidden,
                                                               slope, rng);
    discriminator_ = std::make_unique<gen::MultiScaleDiscriminator<Scalar>>(
        config_.discriminator_scales, 1 + kNumClasses, config_.discriminator_width, slope, rng);
  }

  const GanConfig& config() const { return config_; }
  gen::StyleEncoder<Scalar>& encoder() { return *encoder_; }
  gen::SpadeGenerator<Scalar>& generator() { return *generator_; }
  gen::MultiScaleDiscriminator<Scalar>& discriminator() { return *discriminator_; }

  bool trained() const { return trained_; }
  void set_trained(bool v) { trained_ = v; }

  /// Serialises frozen-model inference; layer caches are per instance.
  std::mutex& inference_mutex() { return mutex_; }

  /// Encoder and generator parameters.
  nn::ParameterList<Scalar> generator_parameters() {
    nn::ParameterList<Scalar> out;
    encoder_->collect("encoder.", out);
    generator_->collect("generator.", out);
    return out;
  }
  nn::ParameterList<Scalar> discriminator_parameters() {
    nn::ParameterList<Scalar> out;
    discriminator_->collect("discriminator.", out);
    return out;
  }
  nn::ParameterList<Scalar> parameters() {
    auto out = generator_parameters();
    auto d = discriminator_parameters();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  std::vector<std::string> manifest() const {
    std::vector<std::string> lines;
    encoder_->manifest("encoder.", lines);
    generator_->manifest("generator.", lines);
    discriminator_->manifest("discriminator.", lines);
    return lines;
  }

 private:
  GanConfig config_;
  std::unique_ptr<gen::StyleEncoder<Scalar>> encoder_;
  std::unique_ptr<gen::SpadeGenerator<Scalar>> generator_;
  std::unique_ptr<gen::MultiScaleDiscriminator<Scalar>> discriminator_;
  bool trained_ = false;
  std::mutex mutex_;
};

using Gan = SpadeGan<float>;

/// (n, 1, H, W) stack of image planes.
nn::Tensor<float> stack_images(std::span<const ImageSlice> images);

/// Eval-mode style code of a normalised image plane.
StyleCode style_encode(Gan& model, const ImageSlice& image);
/// Eval-mode rendering of a label map with a style code; values in [-1, 1].
ImageSlice generate(Gan& model, const OneHotLabelMap& label, const StyleCode& style);
/// Batch rendering; row i of \p styles goes with label i.
std::vector<ImageSlice> generate_batch(Gan& model, std::span<const OneHotLabelMap> labels, const Eigen::MatrixXf& styles);

struct GanEpochRecord {
  int epoch = 0;
  double g_adv = 0.0;
  double g_fm = 0.0;
  double g_l1 = 0.0;
  double g_total = 0.0;
  double d_real = 0.0;
  double d_fake = 0.0;
  /// Fraction of real and generated training images the discriminator
  /// classifies correctly (sign of the patch-mean logit, averaged over scales).
  double d_accuracy = 0.0;
};

struct TrainedGan {
  std::unique_ptr<Gan> model;
  std::vector<GanEpochRecord> log;
};

using GanProgress = std::function<void(const GanEpochRecord&)>;

/// Adversarial training on paired slices: hinge loss over every
/// discriminator scale, feature matching on the discriminator activations
/// and an L1 term against the paired real image. The style of each real
/// image is encoded from the image itself.
TrainedGan train_gan(std::span<const ImagePair> dataset, GanConfig config, const GanProgress& progress = {});

/// Accuracy of the model's discriminator on real pairs and their
/// reconstructions (style from the real image), counted as in the log.
double discriminator_accuracy(Gan& model, std::span<const ImagePair> pairs);

/// Per-class mean intensity of \p image over the argmax regions of \p label;
/// NaN for absent classes.
std::array<double, kNumClasses> class_mean_intensities(const ImageSlice& image, const OneHotLabelMap& label);

/// Renders every slice of \p labels. Slice i takes its style from the slice
/// of \p style_source at the nearest normalised position
/// round(i * (S - 1) / (N - 1)). In-plane spacing and metadata come from the
/// style source; the slice spacing is scaled so both stacks span the same
/// extent.
Subject synthesize_subject(Gan& model, const LabelVolume& labels, const Subject& style_source);

void save_gan(const std::filesystem::path& path, Gan& model);
std::unique_ptr<Gan> load_gan(const std::filesystem::path& path);
void write_gan_log(const std::filesystem::path& path, const std::vector<GanEpochRecord>& log);

}  // namespace cmr
