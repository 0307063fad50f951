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
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmr/seg/augment.hpp"
#include "cmr/seg/metrics.hpp"
#include "cmr/seg/unet.hpp"

namespace cmr {

struct SegTrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 3e-5;
  /// The step size is divided by plateau_factor when the validation loss
  /// has not dropped by at least plateau_threshold (absolute) below its best
  /// value for plateau_patience consecutive epochs.
  double plateau_factor = 5.0;
  double plateau_threshold = 5e-3;
  int plateau_patience = 50;
  int max_epochs = 1000;
  /// Training stops once the step size falls below this value.
  double min_learning_rate = 1e-6;
  int batch_size = 8;
  int iterations_per_epoch = 50;
  double validation_fraction = 0.2;
  int base_width = 32;
  int levels = 4;
  double leaky_slope = 0.01;
  int image_size = 128;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SegTrainConfig& config);
SegTrainConfig seg_config_from_json(const nlohmann::json& j);

/// Reduce-on-plateau step size schedule with an early-stop floor.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, double threshold, int patience, double min_lr);

  /// Records one epoch's validation loss; returns true when the step size changed.
  bool step(double validation_loss);
  double lr() const { return lr_; }
  bool should_stop() const { return lr_ < min_lr_; }
  int epochs_without_improvement() const { return bad_epochs_; }

 private:
  double lr_, factor_, threshold_, min_lr_;
  int patience_;
  double best_;
  int bad_epochs_ = 0;
};

struct Segmenter {
  explicit Segmenter(const SegTrainConfig& config);

  SegTrainConfig config;
  seg::UNet<float> net;
};

struct SegEpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainedSegmenter {
  std::unique_ptr<Segmenter> model;
  std::vector<SegEpochRecord> log;
  int best_epoch = -1;
  double best_validation_loss = 0.0;
  bool early_stopped = false;
  std::vector<std::string> validation_subjects;
};

using SegProgress = std::function<void(const SegEpochRecord&)>;

/// Soft Dice over the foreground classes plus mean cross-entropy, on one
/// batch of slices (labels one-hot). Returns the loss and writes dL/dlogits.
double segmentation_loss(const nn::Tensor<float>& logits, const nn::Tensor<float>& target, nn::Tensor<float>* dlogits);

/// Trains on the union of \p sets. A pathology-stratified 20% of subjects is
/// held out for validation; the weights of the best validation epoch are
/// restored (and written to \p checkpoint when given).
TrainedSegmenter train_segmenter(std::span<const std::vector<Subject>> sets, const SegTrainConfig& config,
                                 const SegProgress& progress = {},
                                 const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Slice-wise argmax prediction, optionally followed by largest-component filtering.
LabelVolume segment(Segmenter& model, const Subject& subject, bool largest_component = true);

void save_segmenter(const std::filesystem::path& path, Segmenter& model);
std::unique_ptr<Segmenter> load_segmenter(const std::filesystem::path& path);
void write_seg_log(const std::filesystem::path& path, const std::vector<SegEpochRecord>& log);

struct ExperimentModel {
  std::string name;
  std::vector<std::string> datasets;
};

struct ExperimentManifest {
  std::map<std::string, std::vector<Subject>> datasets;
  std::vector<ExperimentModel> models;
  std::string test_set;
};

struct SubjectScore {
  std::string model;
  std::string subject_id;
  Pathology pathology = Pathology::UNKNOWN;
  int class_id = 0;
  double dice = 0.0;
  std::optional<double> hausdorff_mm;
};

struct ClassSummary {
  double dice_mean = 0.0;
  double dice_std = 0.0;
  /// Over subjects where the distance is defined.
  double hausdorff_mean = 0.0;
  double hausdorff_std = 0.0;
  int hausdorff_undefined = 0;
  int subjects = 0;
};

struct ModelSummary {
  std::string name;
  std::array<ClassSummary, kNumClasses> classes;  // index 0 unused
  std::vector<SegEpochRecord> log;
  double mean_foreground_dice() const;
};

struct ExperimentReport {
  std::vector<ModelSummary> models;
  std::vector<SubjectScore> scores;
};

/// Segments every test subject and appends one score per foreground class.
ModelSummary evaluate_segmenter(Segmenter& model, const std::string& name, std::span<const Subject> test,
                                std::vector<SubjectScore>& scores);

using ExperimentProgress = std::function<void(const std::string& model, const SegEpochRecord&)>;

/// Trains one segmenter per declared model on the union of its datasets and
/// scores Dice and Hausdorff distance per foreground class on the test set.
ExperimentReport run_experiment_matrix(const ExperimentManifest& manifest, const SegTrainConfig& config,
                                       const ExperimentProgress& progress = {});

/// model,class,dice_mean,dice_std,hd_mean_mm,hd_std_mm,hd_undefined,subjects; a
/// leading comment line records the distance definition.
void write_report_table(const std::filesystem::path& path, const ExperimentReport& report);
/// Long format: model,subject,pathology,class,dice,hd_mm (empty when undefined).
void write_boxplot_data(const std::filesystem::path& path, const ExperimentReport& report);

}  // namespace cmr
