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

#include "cmr/seg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "cmr/nn/checkpoint.hpp"
#include "cmr/nn/functional.hpp"
#include "cmr/nn/optim.hpp"

namespace cmr {
namespace {

using Tensor = nn::Tensor<float>;
constexpr std::array<int, 3> kForeground{1, 2, 3};

LabeledSlice labeled_slice(const Subject& s, int k) {
  LabeledSlice out;
  out.image = image_slice(s.image, k);
  out.labels = Eigen::Map<const LabelSlice>(s.labels.slice(k).data(), s.labels.rows(), s.labels.cols());
  return out;
}

void stack(std::span<const LabeledSlice> batch, Tensor& x, Tensor& y) {
  const int n = static_cast<int>(batch.size());
  const int h = static_cast<int>(batch[0].image.rows()), w = static_cast<int>(batch[0].image.cols());
  x = Tensor(n, 1, h, w);
  y = Tensor(n, kNumClasses, h, w);
  for (int i = 0; i < n; ++i) {
    x.matrix(i) = batch[i].image.reshaped<Eigen::RowMajor>().transpose();
    const auto lab = batch[i].labels.reshaped<Eigen::RowMajor>();
    auto yi = y.matrix(i);
    for (Eigen::Index p = 0; p < lab.size(); ++p) yi(lab[p], p) = 1.0f;
  }
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

void check_conforming(const Subject& s, int size) {
  check_subject(s);
  if (s.image.rows() != size || s.image.cols() != size) {
    throw ShapeMismatchError("segmenter: subject " + s.meta.subject_id + " is not " + std::to_string(size) + "x" +
                             std::to_string(size));
  }
}

}  // namespace

void SegTrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0) || !(plateau_factor > 1.0) || !(plateau_threshold >= 0.0)) {
    throw InvalidArgumentError("SegTrainConfig: invalid optimiser scalars");
  }
  if (!(min_learning_rate > 0.0 && min_learning_rate < learning_rate)) {
    throw InvalidArgumentError("SegTrainConfig: min_learning_rate must lie in (0, learning_rate)");
  }
  if (plateau_patience < 1 || max_epochs < 0 || batch_size < 1 || iterations_per_epoch < 1) {
    throw InvalidArgumentError("SegTrainConfig: invalid epoch settings");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw InvalidArgumentError("SegTrainConfig: validation_fraction must lie in [0,1)");
  if (base_width < 1 || levels < 2 || image_size % (1 << (levels - 1)) != 0) {
    throw InvalidArgumentError("SegTrainConfig: invalid network shape");
  }
  augment.validate();
}

nlohmann::json to_json(const SegTrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"plateau_factor", c.plateau_factor},
          {"plateau_threshold", c.plateau_threshold},
          {"plateau_patience", c.plateau_patience},
          {"max_epochs", c.max_epochs},
          {"min_learning_rate", c.min_learning_rate},
          {"batch_size", c.batch_size},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"validation_fraction", c.validation_fraction},
          {"base_width", c.base_width},
          {"levels", c.levels},
          {"leaky_slope", c.leaky_slope},
          {"image_size", c.image_size},
          {"augment", to_json(c.augment)},
          {"seed", c.seed},
          {"loss", "soft dice (foreground) + cross-entropy"}};
}

SegTrainConfig seg_config_from_json(const nlohmann::json& j) {
  SegTrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_threshold = j.value("plateau_threshold", c.plateau_threshold);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.min_learning_rate = j.value("min_learning_rate", c.min_learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.base_width = j.value("base_width", c.base_width);
  c.levels = j.value("levels", c.levels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("augment")) c.augment = augment_config_from_json(j.at("augment"));
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

PlateauScheduler::PlateauScheduler(double lr, double factor, double threshold, int patience, double min_lr)
    : lr_(lr), factor_(factor), threshold_(threshold), min_lr_(min_lr), patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::step(double validation_loss) {
  if (validation_loss < best_ - threshold_) {
    best_ = validation_loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  lr_ /= factor_;
  bad_epochs_ = 0;
  return true;
}

Segmenter::Segmenter(const SegTrainConfig& c)
    : config((c.validate(), c)),
      net([&] {
        std::mt19937_64 rng(c.seed);
        return seg::UNet<float>(1, kNumClasses, c.base_width, c.levels, c.leaky_slope, rng);
      }()) {}

double segmentation_loss(const Tensor& logits, const Tensor& target, Tensor* dlogits) {
  const Tensor probs = nn::softmax_channels(logits);
  const std::array<double, kNumClasses> ones{1.0, 1.0, 1.0, 1.0};
  Tensor dce, ddice;
  const double ce = nn::weighted_cross_entropy(probs, target, ones, nn::Reduction::Mean, dlogits ? &dce : nullptr);
  const double dl = nn::soft_dice_loss(probs, target, kForeground, dlogits ? &ddice : nullptr);
  if (dlogits) {
    *dlogits = nn::softmax_backward(probs, ddice);
    dlogits->data += dce.data;
  }
  return ce + dl;
}

TrainedSegmenter train_segmenter(std::span<const std::vector<Subject>> sets, const SegTrainConfig& config,
                                 const SegProgress& progress, const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  std::vector<const Subject*> subjects;
  for (const auto& set : sets)
    for (const auto& s : set) {
      check_conforming(s, config.image_size);
      subjects.push_back(&s);
    }
  if (subjects.empty()) throw InvalidArgumentError("train_segmenter: no training subjects");

  std::mt19937_64 rng(config.seed ^ 0x5e6ULL);
  std::map<Pathology, std::vector<const Subject*>> groups;
  for (const auto* s : subjects) groups[s->meta.pathology].push_back(s);
  std::vector<LabeledSlice> train, val;
  TrainedSegmenter result;
  for (auto& [pathology, group] : groups) {
    std::shuffle(group.begin(), group.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * double(group.size())));
    for (std::size_t i = 0; i < group.size(); ++i) {
      const bool is_val = i < n_val;
      if (is_val) result.validation_subjects.push_back(group[i]->meta.subject_id);
      for (int k = 0; k < group[i]->image.slices(); ++k) (is_val ? val : train).push_back(labeled_slice(*group[i], k));
    }
  }
  if (train.empty()) throw InvalidArgumentError("train_segmenter: validation split left no training subjects");
  if (val.empty()) val = train;

  result.model = std::make_unique<Segmenter>(config);
  auto& net = result.model->net;
  auto params = nn::ParameterList<float>{};
  net.collect("unet.", params);
  nn::Adam<float> opt(params, {.lr = config.learning_rate, .weight_decay = config.weight_decay});
  PlateauScheduler schedule(config.learning_rate, config.plateau_factor, config.plateau_threshold,
                            config.plateau_patience, config.min_learning_rate);
  std::vector<Eigen::VectorXf> best(params.size());
  result.best_validation_loss = std::numeric_limits<double>::infinity();
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  const int batch = std::max(2, config.batch_size);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    SegEpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = schedule.lr();
    opt.set_lr(schedule.lr());
    for (int it = 0; it < config.iterations_per_epoch; ++it) {
      std::vector<LabeledSlice> b;
      for (int k = 0; k < batch; ++k) b.push_back(augment(train[pick(rng)], config.augment, rng));
      Tensor x, y, dlogits;
      stack(b, x, y);
      opt.zero_grad();
      const double loss = segmentation_loss(net.forward(x, nn::Mode::Train), y, &dlogits);
      if (!std::isfinite(loss)) throw TrainingDivergedError("train_segmenter: non-finite loss at epoch " + std::to_string(epoch));
      net.backward(dlogits);
      opt.step();
      rec.train_loss += loss / config.iterations_per_epoch;
    }
    double vsum = 0.0;
    for (std::size_t start = 0; start < val.size(); start += batch) {
      const auto chunk = std::span(val).subspan(start, std::min<std::size_t>(batch, val.size() - start));
      Tensor x, y;
      stack(chunk, x, y);
      vsum += segmentation_loss(net.forward(x, nn::Mode::Eval), y, nullptr) * double(chunk.size());
    }
    rec.validation_loss = vsum / double(val.size());
    if (!std::isfinite(rec.validation_loss)) throw TrainingDivergedError("train_segmenter: non-finite validation loss at epoch " + std::to_string(epoch));
    if (rec.validation_loss < result.best_validation_loss) {
      result.best_validation_loss = rec.validation_loss;
      result.best_epoch = epoch;
      for (std::size_t p = 0; p < params.size(); ++p) best[p] = params[p].param->value;
      if (checkpoint) save_segmenter(*checkpoint, *result.model);
    }
    result.log.push_back(rec);
    if (progress) progress(rec);
    schedule.step(rec.validation_loss);
    if (schedule.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  if (result.best_epoch >= 0) {
    for (std::size_t p = 0; p < params.size(); ++p) params[p].param->value = best[p];
  }
  return result;
}

LabelVolume segment(Segmenter& model, const Subject& subject, bool largest_component) {
  check_conforming(subject, model.config.image_size);
  const int n = subject.image.slices(), size = model.config.image_size;
  LabelVolume out(n, size, size);
  for (int start = 0; start < n; start += 16) {
    const int count = std::min(16, n - start);
    Tensor x(count, 1, size, size);
    for (int i = 0; i < count; ++i) x.matrix(i) = image_slice(subject.image, start + i).reshaped<Eigen::RowMajor>().transpose();
    const Tensor logits = model.net.forward(x, nn::Mode::Eval);
    for (int i = 0; i < count; ++i) {
      const auto m = logits.matrix(i);
      auto dst = out.slice(start + i);
      for (Eigen::Index p = 0; p < m.cols(); ++p) {
        Eigen::Index best;
        m.col(p).maxCoeff(&best);
        dst[p] = static_cast<std::uint8_t>(best);
      }
    }
  }
  return largest_component ? largest_component_filter(out) : out;
}

void save_segmenter(const std::filesystem::path& path, Segmenter& model) {
  nn::ParameterList<float> params;
  model.net.collect("unet.", params);
  nlohmann::json meta{{"kind", "segmenter"}, {"config", to_json(model.config)}, {"manifest", model.net.manifest("unet.")}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nn::write_checkpoint(path, meta, params);
}

std::unique_ptr<Segmenter> load_segmenter(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", "") != "segmenter") throw CorruptHeaderError(path.string() + " is not a segmenter checkpoint");
  auto model = std::make_unique<Segmenter>(seg_config_from_json(meta.at("config")));
  nn::ParameterList<float> params;
  model->net.collect("unet.", params);
  nn::read_checkpoint(path, params);
  return model;
}

void write_seg_log(const std::filesystem::path& path, const std::vector<SegEpochRecord>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "epoch,train_loss,validation_loss,learning_rate\n";
  out.precision(10);
  for (const auto& r : log) out << r.epoch << ',' << r.train_loss << ',' << r.validation_loss << ',' << r.learning_rate << '\n';
}

double ModelSummary::mean_foreground_dice() const {
  return (classes[1].dice_mean + classes[2].dice_mean + classes[3].dice_mean) / 3.0;
}

ModelSummary evaluate_segmenter(Segmenter& model, const std::string& name, std::span<const Subject> test,
                                std::vector<SubjectScore>& scores) {
  if (test.empty()) throw InvalidArgumentError("evaluate_segmenter: empty test set");
  ModelSummary summary;
  summary.name = name;
  std::array<std::vector<double>, kNumClasses> dices, hds;
  for (const auto& s : test) {
    const LabelVolume pred = segment(model, s);
    for (int c : kForeground) {
      SubjectScore sc{name, s.meta.subject_id, s.meta.pathology, c, dice(pred, s.labels, c), hausdorff(pred, s.labels, c, s.spacing)};
      dices[c].push_back(sc.dice);
      if (sc.hausdorff_mm) {
        hds[c].push_back(*sc.hausdorff_mm);
      } else {
        ++summary.classes[c].hausdorff_undefined;
      }
      scores.push_back(std::move(sc));
    }
  }
  for (int c : kForeground) {
    auto& cs = summary.classes[c];
    cs.subjects = static_cast<int>(test.size());
    cs.dice_mean = mean(dices[c]);
    cs.dice_std = stddev(dices[c]);
    cs.hausdorff_mean = hds[c].empty() ? std::numeric_limits<double>::quiet_NaN() : mean(hds[c]);
    cs.hausdorff_std = stddev(hds[c]);
  }
  return summary;
}

ExperimentReport run_experiment_matrix(const ExperimentManifest& manifest, const SegTrainConfig& config,
                                       const ExperimentProgress& progress) {
  auto find = [&](const std::string& name) -> const std::vector<Subject>& {
    const auto it = manifest.datasets.find(name);
    if (it == manifest.datasets.end()) throw InvalidArgumentError("run_experiment_matrix: dataset '" + name + "' is not in the manifest");
    return it->second;
  };
  const auto& test = find(manifest.test_set);
  if (test.empty()) throw InvalidArgumentError("run_experiment_matrix: empty test set");
  std::set<std::string> names;
  for (const auto& m : manifest.models) {
    if (!names.insert(m.name).second) throw InvalidArgumentError("run_experiment_matrix: duplicate model name '" + m.name + "'");
    if (m.datasets.empty()) throw InvalidArgumentError("run_experiment_matrix: model '" + m.name + "' has no datasets");
    for (const auto& d : m.datasets) find(d);
  }

  ExperimentReport report;
  for (const auto& m : manifest.models) {
    std::vector<std::vector<Subject>> sets;
    for (const auto& d : m.datasets) sets.push_back(find(d));
    auto trained = train_segmenter(sets, config, [&](const SegEpochRecord& r) {
      if (progress) progress(m.name, r);
    });
    ModelSummary summary = evaluate_segmenter(*trained.model, m.name, test, report.scores);
    summary.log = trained.log;
    report.models.push_back(std::move(summary));
  }
  return report;
}

void write_report_table(const std::filesystem::path& path, const ExperimentReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "# hausdorff: full (maximum) symmetric distance, volumetric 3D, boundary voxels have a face neighbour "
         "outside the mask, millimetres; undefined when a mask is empty\n";
  out << "model,class,dice_mean,dice_std,hd_mean_mm,hd_std_mm,hd_undefined,subjects\n";
  out.precision(6);
  static const char* names[kNumClasses] = {"BG", "RV", "MYO", "LV"};
  for (const auto& m : report.models) {
    for (int c : kForeground) {
      const auto& cs = m.classes[c];
      out << m.name << ',' << names[c] << ',' << cs.dice_mean << ',' << cs.dice_std << ',' << cs.hausdorff_mean << ','
          << cs.hausdorff_std << ',' << cs.hausdorff_undefined << ',' << cs.subjects << '\n';
    }
  }
}

void write_boxplot_data(const std::filesystem::path& path, const ExperimentReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "model,subject,pathology,class,dice,hd_mm\n";
  out.precision(6);
  static const char* names[kNumClasses] = {"BG", "RV", "MYO", "LV"};
  for (const auto& s : report.scores) {
    out << s.model << ',' << s.subject_id << ',' << to_string(s.pathology) << ',' << names[s.class_id] << ',' << s.dice << ',';
    if (s.hausdorff_mm) out << *s.hausdorff_mm;
    out << '\n';
  }
}

}  // namespace cmr
