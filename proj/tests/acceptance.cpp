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

// Acceptance runner: one PASS/FAIL line per criterion. Criteria may be
// selected on the command line (e.g. `acceptance 1 2 10`); default is all.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmr/gen/gan.hpp"
#include "cmr/gen/spade.hpp"
#include "cmr/latent/embedding.hpp"
#include "cmr/latent/latent.hpp"
#include "cmr/latent/numeric.hpp"
#include "cmr/phantom.hpp"
#include "cmr/preprocess.hpp"
#include "cmr/seg/metrics.hpp"
#include "cmr/seg/segmenter.hpp"
#include "cmr/vae.hpp"
#include "gradcheck.hpp"

using namespace cmr;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kCholeskyTol = 1e-8;
constexpr int kCholeskyMatrices = 100;
constexpr int kKendallMaxLength = 6;
constexpr double kSplineTol = 1e-6;
constexpr int kTruncDraws = 100000;
constexpr double kTruncMeanTol = 0.01;
constexpr double kCovTol = 0.05;
constexpr int kCovSamples = 10000;
constexpr double kSoftmaxTol = 1e-5;
constexpr double kGradTol = 1e-3;
constexpr double kReconDice = 0.90;
constexpr double kAreaJumpFactor = 3.0;
constexpr double kSpearmanMin = 0.9;
constexpr int kRoughnessSamples = 20;
constexpr double kRoughnessReduction = 0.25;
constexpr double kSilhouetteMin = 0.0;
constexpr double kCentroidAccuracy = 0.70;
constexpr double kIntensityGapFraction = 0.20;
constexpr double kSpadeTol = 1e-12;

// -------------------------------------------------------- experiment sizes

constexpr std::array kPathologies{Pathology::NOR, Pathology::DCM, Pathology::HCM, Pathology::DRV};
constexpr std::array kTargets{Pathology::DCM, Pathology::HCM, Pathology::DRV};

constexpr int kVaeSubjects = 12;  // per pathology
constexpr int kVaeHeldOut = 2;    // per pathology
constexpr int kGanSubjects = 7;   // per pathology
constexpr int kGanHeldOut = 1;    // per pathology

VaeConfig acceptance_vae_config() {
  VaeConfig c;
  c.widths = {8, 16, 32, 64};
  c.epochs = 75;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.final_learning_rate = 1e-5;
  c.seed = 1;
  return c;
}

GanConfig acceptance_gan_config() {
  GanConfig c;
  c.style_dim = 16;
  c.generator_width = 8;
  c.encoder_width = 8;
  c.discriminator_width = 16;
  c.spade_hidden = 16;
  c.generator_lr = 2e-4;
  c.discriminator_lr = 8e-4;
  c.lambda_l1 = 100.0;
  c.batch_size = 8;
  c.epochs = 20;
  c.seed = 1;
  return c;
}

SegTrainConfig acceptance_seg_config() {
  SegTrainConfig c;
  c.base_width = 8;
  c.levels = 4;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.iterations_per_epoch = 25;
  c.max_epochs = 30;
  c.plateau_patience = 5;
  c.plateau_threshold = 1e-3;
  c.seed = 1;
  return c;
}

// ------------------------------------------------------------------ report

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Lines go to stdout and to acceptance_report.txt in the working directory.
struct Report {
  int failures = 0;
  std::ofstream file{"acceptance_report.txt"};
  void line(int id, bool pass, const std::string& title, const std::string& detail) {
    if (!pass) ++failures;
    std::ostringstream s;
    s << "criterion " << id << ' ' << (pass ? "PASS" : "FAIL") << "  " << title << ": " << detail;
    std::cout << s.str() << std::endl;
    file << s.str() << std::endl;
  }
};

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

// ----------------------------------------------------------------- helpers

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = 0.5 * double(i + j - 1);
    i = j;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

// areas[s][c]: voxel count of class c on slice s.
std::vector<std::array<double, kNumClasses>> slice_areas(const LabelVolume& v) {
  std::vector<std::array<double, kNumClasses>> a(static_cast<std::size_t>(v.slices()));
  for (int s = 0; s < v.slices(); ++s)
    for (auto x : v.slice(s)) a[static_cast<std::size_t>(s)][x] += 1.0;
  return a;
}

double max_adjacent_jump(const LabelVolume& v, int c) {
  const auto a = slice_areas(v);
  double m = 0.0;
  for (std::size_t s = 1; s < a.size(); ++s) m = std::max(m, std::abs(a[s][c] - a[s - 1][c]));
  return m;
}

// Mean absolute adjacent-slice area difference over the foreground classes.
double roughness(const LabelVolume& v) {
  const auto a = slice_areas(v);
  double sum = 0.0;
  int n = 0;
  for (std::size_t s = 1; s < a.size(); ++s)
    for (int c = 1; c < kNumClasses; ++c, ++n) sum += std::abs(a[s][c] - a[s - 1][c]);
  return sum / n;
}

double class_count(const LabelVolume& v, int c) {
  return static_cast<double>(std::count(v.data().begin(), v.data().end(), static_cast<std::uint8_t>(c)));
}

const char* class_name(int c) {
  static constexpr std::array<const char*, kNumClasses> names{"BG", "RV", "MYO", "LV"};
  return names[static_cast<std::size_t>(c)];
}

int class_of_interest(Pathology p) {
  switch (p) {
    case Pathology::HCM: return 2;
    case Pathology::DCM: return 3;
    case Pathology::DRV: return 1;
    default: return 0;
  }
}

int pathology_index(Pathology p) {
  return static_cast<int>(std::find(kPathologies.begin(), kPathologies.end(), p) - kPathologies.begin());
}

Subject phantom_subject(Pathology p, std::uint64_t seed, const std::string& vendor, double severity = 1.0,
                        std::optional<int> n_slices = std::nullopt) {
  auto params = phantom_preset(p, seed, severity);
  params.vendor = vendor;
  if (n_slices) params.n_slices = *n_slices;
  params.subject_id = std::string(to_string(p)) + "_" + std::to_string(seed);
  return preprocess(generate_phantom(params));
}

// ---------------------------------------------------------- shared fixture

// Everything the experiment criteria share is built lazily and at most once.
class Fixture {
 public:
  // Label cohorts for the VAE: the last kVaeHeldOut subjects per pathology are held out.
  const std::map<Pathology, std::vector<Subject>>& vae_train() { build_vae_cohorts(); return vae_train_; }
  const std::map<Pathology, std::vector<Subject>>& vae_test() { build_vae_cohorts(); return vae_test_; }

  Vae& vae() {
    if (!vae_ && cached("vae.ckpt")) {
      vae_ = load_vae(*cached("vae.ckpt"));
      progress("loaded VAE from " + cached("vae.ckpt")->string());
    }
    if (!vae_) {
      std::vector<OneHotLabelMap> maps;
      for (const auto& [p, subjects] : vae_train())
        for (const auto& s : subjects)
          for (int sl = 0; sl < s.labels.slices(); ++sl) maps.push_back(one_hot(s.labels, sl));
      progress("training VAE on " + std::to_string(maps.size()) + " label slices");
      const auto t0 = Clock::now();
      const auto cfg = acceptance_vae_config();
      auto trained = train_vae(maps, cfg, [&](const VaeEpochRecord& r) {
        if (r.epoch % 10 == 0 || r.epoch == cfg.epochs - 1)
          progress("vae epoch " + std::to_string(r.epoch) + " ce " + fmt(r.ce) + " kld " + fmt(r.kld) + " val " +
                   fmt(r.val_total) + " t " + fmt(seconds_since(t0)) + "s");
      });
      vae_ = std::move(trained.model);
      vae_minutes_ = seconds_since(t0) / 60.0;
      vae_slices_ = static_cast<int>(maps.size());
      if (auto dir = cache_dir()) save_vae(*dir / "vae.ckpt", *vae_);
    }
    return *vae_;
  }
  double vae_minutes() const { return vae_minutes_; }
  int vae_slices() const { return vae_slices_; }

  // Training-subject latents per pathology, resampled to 32 slices.
  const std::map<Pathology, std::vector<latent::LatentSubject>>& cohort_latents() {
    if (cohort_latents_.empty()) {
      for (const auto& [p, subjects] : vae_train())
        for (const auto& s : subjects)
          cohort_latents_[p].push_back(latent::intra_subject_interpolate(latent::encode_subject(vae(), s)));
    }
    return cohort_latents_;
  }

  const latent::PathologyStats& stats(Pathology p) {
    auto it = stats_.find(p);
    if (it == stats_.end()) it = stats_.emplace(p, latent::estimate_pathology_stats(cohort_latents().at(p), p)).first;
    return it->second;
  }

  // Paired image/label slices for the generator, vendors alternating.
  const std::vector<ImagePair>& gan_train() { build_gan_pairs(); return gan_train_; }
  const std::vector<ImagePair>& gan_test() { build_gan_pairs(); return gan_test_; }

  Gan& gan() {
    if (!gan_ && cached("gan.ckpt")) {
      gan_ = load_gan(*cached("gan.ckpt"));
      progress("loaded GAN from " + cached("gan.ckpt")->string());
    }
    if (!gan_) {
      progress("training GAN on " + std::to_string(gan_train().size()) + " pairs");
      const auto t0 = Clock::now();
      auto trained = train_gan(gan_train(), acceptance_gan_config(), [&](const GanEpochRecord& r) {
        if (r.epoch % 5 == 0)
          progress("gan epoch " + std::to_string(r.epoch) + " l1 " + fmt(r.g_l1) + " d_acc " + fmt(r.d_accuracy) +
                   " t " + fmt(seconds_since(t0)) + "s");
      });
      gan_ = std::move(trained.model);
      gan_minutes_ = seconds_since(t0) / 60.0;
      if (auto dir = cache_dir()) save_gan(*dir / "gan.ckpt", *gan_);
    }
    return *gan_;
  }
  double gan_minutes() const { return gan_minutes_; }

 private:
  // Optional model cache for repeated development runs.
  static std::optional<std::filesystem::path> cache_dir() {
    const char* env = std::getenv("CMRSYNTH_ACCEPTANCE_CACHE");
    if (!env || !*env) return std::nullopt;
    std::filesystem::create_directories(env);
    return std::filesystem::path(env);
  }
  static std::optional<std::filesystem::path> cached(const std::string& name) {
    auto dir = cache_dir();
    if (!dir || !std::filesystem::exists(*dir / name)) return std::nullopt;
    return *dir / name;
  }

  void build_vae_cohorts() {
    if (!vae_train_.empty()) return;
    std::uint64_t seed = 100;
    for (auto p : kPathologies) {
      for (int i = 0; i < kVaeSubjects; ++i) {
        auto s = phantom_subject(p, seed++, "A");
        (i < kVaeSubjects - kVaeHeldOut ? vae_train_ : vae_test_)[p].push_back(std::move(s));
      }
    }
  }

  void build_gan_pairs() {
    if (!gan_train_.empty()) return;
    std::uint64_t seed = 300;
    for (auto p : kPathologies) {
      for (int i = 0; i < kGanSubjects; ++i, ++seed) {
        const auto s = phantom_subject(p, seed, seed % 2 ? "B" : "A");
        for (auto& pair : slice_pairs(s)) (i < kGanSubjects - kGanHeldOut ? gan_train_ : gan_test_).push_back(pair);
      }
    }
  }

  std::map<Pathology, std::vector<Subject>> vae_train_, vae_test_;
  std::unique_ptr<Vae> vae_;
  double vae_minutes_ = 0.0;
  int vae_slices_ = 0;
  std::map<Pathology, std::vector<latent::LatentSubject>> cohort_latents_;
  std::map<Pathology, latent::PathologyStats> stats_;
  std::vector<ImagePair> gan_train_, gan_test_;
  std::unique_ptr<Gan> gan_;
  double gan_minutes_ = 0.0;
};

// -------------------------------------------------------------- criterion 1

void numeric_core(Report& report) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::ostringstream detail;
  bool pass = true;

  double chol_err = 0.0;
  for (int t = 0; t < kCholeskyMatrices; ++t) {
    const int n = 2 + t % 31;
    Eigen::MatrixXd a(n, n);
    for (auto& x : a.reshaped()) x = g(rng);
    const Eigen::MatrixXd c = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    const auto f = latent::cholesky(c);
    const Eigen::MatrixXd r = f.L * f.L.transpose() - c;
    chol_err = std::max(chol_err, r.cwiseAbs().rowwise().sum().maxCoeff());
    pass = pass && f.jitter == 0.0;
  }
  pass = pass && chol_err < kCholeskyTol;
  detail << "cholesky max |LL'-C|inf " << fmt(chol_err, 3);

  // Every pair of vectors over {0,1,2} of each length up to 6, plus all
  // permutation pairs of length 6, against direct pair enumeration.
  long long kendall_cases = 0, kendall_mismatch = 0;
  auto oracle = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    long long n0 = 0, tx = 0, ty = 0, both = 0, s = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      for (Eigen::Index j = i + 1; j < x.size(); ++j) {
        ++n0;
        const int dx = (x[j] > x[i]) - (x[j] < x[i]), dy = (y[j] > y[i]) - (y[j] < y[i]);
        tx += dx == 0;
        ty += dy == 0;
        both += dx == 0 && dy == 0;
        s += dx * dy;
      }
    }
    (void)both;
    const double denom = std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
    return denom == 0.0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(s) / denom;
  };
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  for (int len = 2; len <= kKendallMaxLength; ++len) {
    int total = 1;
    for (int k = 0; k < len; ++k) total *= 3;
    std::vector<Eigen::VectorXd> vecs;
    for (int code = 0; code < total; ++code) {
      Eigen::VectorXd v(len);
      for (int k = 0, c = code; k < len; ++k, c /= 3) v[k] = c % 3;
      vecs.push_back(v);
    }
    for (const auto& x : vecs)
      for (const auto& y : vecs) {
        ++kendall_cases;
        kendall_mismatch += !same(latent::kendall_tau_b(x, y), oracle(x, y));
      }
  }
  {
    std::vector<int> perm(kKendallMaxLength);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<Eigen::VectorXd> perms;
    do {
      Eigen::VectorXd v(kKendallMaxLength);
      for (int k = 0; k < kKendallMaxLength; ++k) v[k] = perm[k];
      perms.push_back(v);
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (const auto& x : perms)
      for (const auto& y : perms) {
        ++kendall_cases;
        kendall_mismatch += !same(latent::kendall_tau_b(x, y), oracle(x, y));
      }
  }
  pass = pass && kendall_mismatch == 0;
  detail << "; kendall " << kendall_mismatch << "/" << kendall_cases << " mismatches";

  // Cubic polynomials sampled at knots and resampled on a finer grid.
  double spline_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const double c0 = g(rng), c1 = g(rng), c2 = g(rng), c3 = g(rng);
    auto p = [&](double x) { return c0 + x * (c1 + x * (c2 + x * c3)); };
    const int n = 4 + t % 10, m = 32;
    Eigen::MatrixXd knots(n, 1);
    for (int i = 0; i < n; ++i) knots(i, 0) = p(double(i) / (n - 1));
    const Eigen::MatrixXd out = latent::cubic_spline_resample(knots, m);
    double scale = 0.0;
    for (int i = 0; i < m; ++i) scale = std::max(scale, std::abs(p(double(i) / (m - 1))));
    for (int i = 0; i < m; ++i) spline_err = std::max(spline_err, std::abs(out(i, 0) - p(double(i) / (m - 1))) / scale);
  }
  pass = pass && spline_err < kSplineTol;
  detail << "; spline cubic rel err " << fmt(spline_err, 3);

  // Symmetric truncation: the mean equals mu. One wide and one tail window.
  bool in_bounds = true;
  double mean_err = 0.0;
  for (auto [mu, sigma, half] : {std::array{0.3, 1.2, 1.5}, std::array{-2.0, 0.5, 0.05}}) {
    double sum = 0.0;
    for (int i = 0; i < kTruncDraws; ++i) {
      const double x = latent::sample_truncated_normal(mu, sigma, mu - half, mu + half, rng);
      in_bounds = in_bounds && x >= mu - half && x <= mu + half;
      sum += x;
    }
    mean_err = std::max(mean_err, std::abs(sum / kTruncDraws - mu));
  }
  {
    // A window far in the tail still yields in-bounds draws.
    for (int i = 0; i < 1000; ++i) {
      const double x = latent::sample_truncated_normal(0.0, 1.0, 6.0, 6.5, rng);
      in_bounds = in_bounds && x >= 6.0 && x <= 6.5;
    }
  }
  pass = pass && in_bounds && mean_err < kTruncMeanTol;
  detail << "; truncnorm in bounds " << (in_bounds ? "100%" : "no") << " mean err " << fmt(mean_err, 3) << " ("
         << fmt(seconds_since(t0), 3) << "s)";
  report.line(1, pass, "numeric core", detail.str());
}

// -------------------------------------------------------------- criterion 2

Eigen::MatrixXd random_correlation(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(d, d + 2);
  for (auto& x : a.reshaped()) x = g(rng);
  Eigen::MatrixXd c = a * a.transpose();
  const Eigen::VectorXd s = c.diagonal().cwiseSqrt().cwiseInverse();
  return s.asDiagonal() * c * s.asDiagonal();
}

void correlation_identity(Report& report) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int d : {4, 16, 32}) {
    for (int t = 0; t < 3; ++t) {
      const Eigen::MatrixXd c = random_correlation(d, rng);
      const auto f = latent::cholesky(c);
      Eigen::MatrixXd x(d, kCovSamples);
      for (auto& v : x.reshaped()) v = g(rng);
      const Eigen::MatrixXd y = f.L * x;
      const Eigen::MatrixXd cov = y * y.transpose() / kCovSamples;
      worst = std::max(worst, (cov - c).cwiseAbs().maxCoeff());
    }
  }
  report.line(2, worst < kCovTol, "correlation identity",
              "max |E[yy']-C| " + fmt(worst, 3) + " over d in {4,16,32} (" + fmt(seconds_since(t0), 3) + "s)");
}

// -------------------------------------------------------------- criterion 3

void vae_contracts(Report& report, Fixture& fx) {
  std::ostringstream detail;
  bool pass = true;

  VaeConfig cfg;
  const auto target = one_hot(fx.vae_test().at(Pathology::NOR).front().labels, 4);
  LatentCode code{Eigen::VectorXd::Zero(cfg.n_z), Eigen::VectorXd::Zero(cfg.n_z)};
  const double k0 = vae_loss(target, target, code, cfg).kld;
  code.mu[0] = 1.0;
  const double k1 = vae_loss(target, target, code, cfg).kld;
  pass = pass && k0 == 0.0 && k1 == 0.5;
  detail << "kld " << std::abs(k0) << " / " << k1;

  {
    VaeConfig tiny;
    tiny.n_z = 2;
    tiny.input_size = 8;
    tiny.widths = {2, 2, 2, 2};
    tiny.strides = {2, 2, 1, 1};
    tiny.fc_hidden = {4, 4, 4};
    tiny.ce_class_weights = std::array<double, kNumClasses>{0.5, 1.5, 1.2, 0.8};
    tiny.seed = 3;
    LabelVae<double> model(tiny);
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> cls(0, kNumClasses - 1);
    std::vector<OneHotLabelMap> maps;
    for (int i = 0; i < 3; ++i) {
      std::vector<std::uint8_t> lab(64);
      for (auto& v : lab) v = static_cast<std::uint8_t>(cls(rng));
      maps.push_back(one_hot(lab, 8, 8));
    }
    nn::Tensor<double> x = stack_one_hot(maps).cast<double>();
    Eigen::MatrixXd noise(3, 2);
    noise << 0.3, -1.1, 0.7, 0.2, -0.5, 1.4;
    const auto w = *tiny.ce_class_weights;
    auto params = model.parameters();
    auto loss = [&](bool grad) { return model.forward_backward(x, noise, w, grad).total; };
    const auto res = testing::check_parameter_gradients(params, loss, 1e-6, 1e-6);
    pass = pass && res.worst < kGradTol;
    detail << "; gradcheck worst " << fmt(res.worst, 3);
  }

  Vae& model = fx.vae();
  {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (int t = 0; t < 8; ++t) {
      Eigen::VectorXd z(model.config().n_z);
      for (auto& v : z) v = 2.0 * g(rng);
      const auto p = decode(model, z);
      worst = std::max(worst, double((p.channels.colwise().sum().array() - 1.0f).abs().maxCoeff()));
    }
    pass = pass && worst <= kSoftmaxTol;
    detail << "; softmax sum err " << fmt(worst, 3);
  }

  // Pooled Dice over every held-out slice.
  std::array<double, kNumClasses> inter{}, sizes{};
  int n_test = 0;
  for (const auto& [p, subjects] : fx.vae_test()) {
    for (const auto& s : subjects) {
      std::vector<OneHotLabelMap> maps;
      for (int sl = 0; sl < s.labels.slices(); ++sl) maps.push_back(one_hot(s.labels, sl));
      const auto rec = decode_batch(model, encode_mu(model, maps));
      for (std::size_t i = 0; i < maps.size(); ++i, ++n_test) {
        const auto a = argmax(maps[i]), b = argmax(rec[i]);
        for (std::size_t k = 0; k < a.size(); ++k) {
          inter[a[k]] += a[k] == b[k];
          sizes[a[k]] += 1.0;
          sizes[b[k]] += 1.0;
        }
      }
    }
  }
  detail << "; held-out dice (" << n_test << " slices, trained on " << fx.vae_slices() << " in "
         << fmt(fx.vae_minutes(), 3) << " min)";
  for (int c = 1; c < kNumClasses; ++c) {
    const double d = 2.0 * inter[c] / sizes[c];
    pass = pass && d >= kReconDice;
    detail << ' ' << class_name(c) << ' ' << fmt(d);
  }
  report.line(3, pass, "VAE contracts", detail.str());
}

// -------------------------------------------------------------- criterion 4

void interpolation_contracts(Report& report, Fixture& fx) {
  Vae& model = fx.vae();
  const auto t0 = Clock::now();
  std::ostringstream detail;
  bool pass = true;

  const auto& tests = fx.vae_test();
  const auto a = latent::encode_subject(model, tests.at(Pathology::NOR).front());
  const auto b = latent::encode_subject(model, tests.at(Pathology::DCM).front());
  const auto a32 = latent::intra_subject_interpolate(a, latent::kInterpolatedSlices);
  const auto b32 = latent::intra_subject_interpolate(b, latent::kInterpolatedSlices);
  const bool ends = a32.codes.row(0) == a.codes.row(0) && a32.codes.row(31) == a.codes.row(a.n_s() - 1);
  const auto pair = latent::inter_subject_interpolate(a32, b32, {0.0, 1.0});
  const bool inter_ends = pair[0].codes == a32.codes && pair[1].codes == b32.codes;
  pass = ends && inter_ends;
  detail << "intra endpoints " << (ends ? "exact" : "differ") << "; inter endpoints " << (inter_ends ? "exact" : "differ");

  const auto nine = phantom_subject(Pathology::NOR, 777, "A", 1.0, 9);
  const auto up = latent::intra_subject_interpolate(latent::encode_subject(model, nine), latent::kInterpolatedSlices);
  const auto decoded = latent::decode_subject(model, up);
  pass = pass && decoded.slices() == latent::kInterpolatedSlices;
  detail << "; 9 -> " << decoded.slices() << " slices, jump ratio";
  for (int c = 1; c < kNumClasses; ++c) {
    const double src = max_adjacent_jump(nine.labels, c), out = max_adjacent_jump(decoded, c);
    const double ratio = src > 0 ? out / src : (out > 0 ? INFINITY : 0.0);
    pass = pass && ratio <= kAreaJumpFactor;
    detail << ' ' << class_name(c) << ' ' << fmt(ratio, 3);
  }
  detail << " (" << fmt(seconds_since(t0), 3) << "s)";
  report.line(4, pass, "interpolation contracts", detail.str());
}

// -------------------------------------------------------------- criterion 5

void pathology_trend(Report& report, Fixture& fx) {
  Vae& model = fx.vae();
  const auto t0 = Clock::now();
  const auto& nor = fx.cohort_latents().at(Pathology::NOR);
  const auto alphas = latent::default_pathology_alphas();
  std::ostringstream detail;
  bool pass = true;
  for (auto target : kTargets) {
    const int cls = class_of_interest(target);
    const auto& stats = fx.stats(target);
    double worst = 1.0;
    for (int r = 0; r < 3; ++r) {
      const auto& ref = nor[static_cast<std::size_t>(r)];
      const auto corr = latent::estimate_correlation_model(fx.cohort_latents().at(target), ref);
      std::mt19937_64 rng(1000 + 10 * pathology_index(target) + r);
      const auto pseudo = latent::sample_pseudo_pathology(stats, rng, &corr);
      std::vector<double> counts;
      for (const auto& step : latent::pathology_interpolate(ref, pseudo, alphas))
        counts.push_back(class_count(latent::decode_subject(model, step), cls));
      worst = std::min(worst, spearman(alphas, counts));
    }
    pass = pass && worst >= kSpearmanMin;
    detail << (target == kTargets.front() ? "" : "; ") << "NOR->" << to_string(target) << ' ' << class_name(cls)
           << " min rho " << fmt(worst, 3);
  }
  detail << " (3 references each, " << fmt(seconds_since(t0), 3) << "s)";
  report.line(5, pass, "pathology synthesis trend", detail.str());
}

// -------------------------------------------------------------- criterion 6

void consistency_improvement(Report& report, Fixture& fx) {
  Vae& model = fx.vae();
  const auto t0 = Clock::now();
  const auto& nor = fx.cohort_latents().at(Pathology::NOR);
  double rough_corr = 0.0, rough_ind = 0.0;
  for (int i = 0; i < kRoughnessSamples; ++i) {
    const auto target = kTargets[static_cast<std::size_t>(i) % kTargets.size()];
    const auto& ref = nor[static_cast<std::size_t>(i) % nor.size()];
    const auto corr = latent::estimate_correlation_model(fx.cohort_latents().at(target), ref);
    std::mt19937_64 rng_a(2000 + i), rng_b(2000 + i);
    const auto with = latent::sample_pseudo_pathology(fx.stats(target), rng_a, &corr);
    const auto without = latent::sample_pseudo_pathology(fx.stats(target), rng_b, nullptr);
    rough_corr += roughness(latent::decode_subject(model, with)) / kRoughnessSamples;
    rough_ind += roughness(latent::decode_subject(model, without)) / kRoughnessSamples;
  }
  const double reduction = 1.0 - rough_corr / rough_ind;
  report.line(6, rough_corr < rough_ind && reduction >= kRoughnessReduction, "3D consistency",
              "mean roughness correlated " + fmt(rough_corr) + " vs independent " + fmt(rough_ind) + ", reduction " +
                  fmt(100.0 * reduction, 3) + "% over " + std::to_string(kRoughnessSamples) + " samples (" +
                  fmt(seconds_since(t0), 3) + "s)");
}

// -------------------------------------------------------------- criterion 7

void latent_clustering(Report& report, Fixture& fx) {
  Vae& model = fx.vae();
  const auto t0 = Clock::now();
  auto codes_of = [&](const std::map<Pathology, std::vector<Subject>>& cohorts, std::vector<int>& labels) {
    std::vector<Eigen::MatrixXd> blocks;
    Eigen::Index rows = 0;
    for (const auto& [p, subjects] : cohorts)
      for (const auto& s : subjects) {
        blocks.push_back(latent::encode_subject(model, s).codes);
        rows += blocks.back().rows();
        labels.insert(labels.end(), static_cast<std::size_t>(blocks.back().rows()), pathology_index(p));
      }
    Eigen::MatrixXd out(rows, blocks.front().cols());
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
      out.middleRows(r, b.rows()) = b;
      r += b.rows();
    }
    return out;
  };
  std::vector<int> train_labels, test_labels;
  const Eigen::MatrixXd train = codes_of(fx.vae_train(), train_labels);
  const Eigen::MatrixXd test = codes_of(fx.vae_test(), test_labels);
  latent::TsneOptions opt;
  opt.seed = 1;
  const auto emb = latent::embed_latents_2d(train, train_labels, opt);
  const double acc = latent::nearest_centroid_accuracy(train, train_labels, test, test_labels);
  report.line(7, emb.silhouette > kSilhouetteMin && acc > kCentroidAccuracy, "latent clustering",
              "t-SNE silhouette " + fmt(emb.silhouette, 3) + " over " + std::to_string(train.rows()) +
                  " slices; nearest-centroid accuracy " + fmt(100.0 * acc, 3) + "% on " +
                  std::to_string(test.rows()) + " held-out slices (" + fmt(seconds_since(t0), 3) + "s)");
}

// -------------------------------------------------------------- criterion 8

void generator_adherence(Report& report, Fixture& fx) {
  std::ostringstream detail;
  bool pass = true;
  {
    using TD = nn::Tensor<double>;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(1.5, 2.0);
    TD h(3, 4, 5, 6), ones(3, 4, 5, 6), zeros(3, 4, 5, 6), beta(3, 4, 5, 6);
    for (auto& v : h.data) v = g(rng);
    for (auto& v : beta.data) v = g(rng);
    ones.data.setOnes();
    const TD unit = gen::spade_modulate(h, ones, zeros, 0.0);
    double err = 0.0;
    for (int c = 0; c < h.c; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < h.n; ++i) s += h.matrix(i).row(c).sum();
      const double m = s / (h.n * h.h * h.w);
      for (int i = 0; i < h.n; ++i) s2 += (h.matrix(i).row(c).array() - m).square().sum();
      const double sd = std::sqrt(s2 / (h.n * h.h * h.w));
      for (int i = 0; i < h.n; ++i)
        err = std::max(err, (unit.matrix(i).row(c).array() - (h.matrix(i).row(c).array() - m) / sd).abs().maxCoeff());
    }
    const bool zero_gamma = gen::spade_modulate(h, zeros, beta).data == beta.data;
    pass = err <= kSpadeTol && zero_gamma;
    detail << "spade unit-modulation err " << fmt(err, 3) << ", zero gamma " << (zero_gamma ? "== beta" : "!= beta");
  }

  Gan& model = fx.gan();
  std::array<double, kNumClasses> real{}, fake{}, count{};
  for (const auto& q : fx.gan_test()) {
    const auto img = generate(model, q.label, style_encode(model, q.image));
    const auto lab = argmax(q.label);
    for (std::size_t k = 0; k < lab.size(); ++k) {
      real[lab[k]] += q.image.data()[k];
      fake[lab[k]] += img.data()[k];
      count[lab[k]] += 1.0;
    }
  }
  for (int c = 0; c < kNumClasses; ++c) {
    real[c] /= count[c];
    fake[c] /= count[c];
  }
  detail << "; " << fx.gan_test().size() << " held-out pairs (trained on " << fx.gan_train().size() << " in "
         << fmt(fx.gan_minutes(), 3) << " min), error/gap";
  for (int c = 0; c < kNumClasses; ++c) {
    double gap = INFINITY;
    for (int j = 0; j < kNumClasses; ++j)
      if (j != c) gap = std::min(gap, std::abs(real[c] - real[j]));
    const double ratio = std::abs(fake[c] - real[c]) / gap;
    pass = pass && ratio <= kIntensityGapFraction;
    detail << ' ' << class_name(c) << ' ' << fmt(ratio, 3);
  }
  report.line(8, pass, "generator label adherence", detail.str());
}

// -------------------------------------------------------------- criterion 9

// Pathology subjects synthesised from NOR anatomies: latent morph towards a
// correlated pseudo-pathological sample, decoded at 32 slices and rendered
// with the reference's appearance.
std::vector<Subject> synthesize_augmentation(Fixture& fx, const std::vector<Subject>& nor_subjects) {
  Vae& vae = fx.vae();
  Gan& gan = fx.gan();
  std::vector<Subject> out;
  int k = 0;
  for (auto target : kTargets) {
    for (std::size_t r = 0; r < nor_subjects.size(); ++r, ++k) {
      const auto& ref_subject = nor_subjects[r];
      const auto ref = latent::encode_subject(vae, ref_subject);
      const auto ref32 = latent::intra_subject_interpolate(ref, latent::kInterpolatedSlices);
      const auto corr = latent::estimate_correlation_model(fx.cohort_latents().at(target), ref32);
      std::mt19937_64 rng(3000 + k);
      const auto pseudo = latent::sample_pseudo_pathology(fx.stats(target), rng, &corr);
      const auto morph = latent::pathology_interpolate(ref32, pseudo, {1.0}).front();
      auto s = synthesize_subject(gan, latent::decode_subject(vae, morph), ref_subject);
      s.meta.pathology = target;
      s.meta.subject_id = "synth_" + std::string(to_string(target)) + "_" + std::to_string(r);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void augmentation_experiment(Report& report, Fixture& fx) {
  std::ostringstream detail;
  bool pass = true;

  // Scheduler contracts: factor-5 drop after a flat plateau, stop below 1e-6.
  {
    const auto cfg = SegTrainConfig{};
    PlateauScheduler s(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_threshold, cfg.plateau_patience,
                       cfg.min_learning_rate);
    s.step(1.0);
    int epochs = 1;
    while (s.lr() == cfg.learning_rate && epochs < 1000) {
      s.step(1.0);
      ++epochs;
    }
    const bool drop = s.lr() == cfg.learning_rate / 5.0 && epochs == cfg.plateau_patience + 1;
    int drops = 1;
    while (!s.should_stop() && epochs < 100000) {
      const double before = s.lr();
      s.step(1.0);
      ++epochs;
      if (s.lr() != before) ++drops;
    }
    const bool stop = s.should_stop() && s.lr() < 1e-6 && drops == 3;
    pass = drop && stop;
    detail << "plateau drop x5 after " << cfg.plateau_patience << " flat epochs " << (drop ? "ok" : "wrong")
           << ", stop at lr " << fmt(s.lr(), 3) << " after " << drops << " drops " << (stop ? "ok" : "wrong");
  }

  // Directional experiment.
  std::vector<Subject> nor_train, test;
  for (int i = 0; i < 8; ++i) nor_train.push_back(phantom_subject(Pathology::NOR, 500 + i, i % 2 ? "B" : "A"));
  std::uint64_t seed = 900;
  for (auto p : kTargets)
    for (int i = 0; i < 3; ++i, ++seed) test.push_back(phantom_subject(p, seed, seed % 2 ? "B" : "A", 1.5));
  const auto synth = synthesize_augmentation(fx, nor_train);

  const auto cfg = acceptance_seg_config();
  auto run = [&](const std::string& name, const std::vector<std::vector<Subject>>& sets) {
    const auto t0 = Clock::now();
    auto trained = train_segmenter(sets, cfg, [&](const SegEpochRecord& r) {
      if (r.epoch % 5 == 0)
        progress(name + " epoch " + std::to_string(r.epoch) + " train " + fmt(r.train_loss) + " val " +
                 fmt(r.validation_loss) + " lr " + fmt(r.learning_rate, 2) + " t " + fmt(seconds_since(t0)) + "s");
    });
    std::vector<SubjectScore> scores;
    const auto summary = evaluate_segmenter(*trained.model, name, test, scores);
    progress(name + " done in " + fmt(seconds_since(t0) / 60.0, 3) + " min");
    return summary;
  };
  const auto base = run("nor-only", {nor_train});
  const auto aug = run("augmented", {nor_train, synth});
  const double d_base = base.mean_foreground_dice(), d_aug = aug.mean_foreground_dice();
  pass = pass && d_aug > d_base;
  detail << "; severe held-out mean foreground dice NOR-only " << fmt(d_base) << " vs augmented " << fmt(d_aug)
         << " (" << synth.size() << " synthesised subjects, " << test.size() << " test subjects)";
  report.line(9, pass, "augmentation benefit", detail.str());
}

// ------------------------------------------------------------- criterion 10

void metric_oracles(Report& report) {
  bool pass = true;
  LabelVolume p(1, 20, 20), g(1, 20, 20);
  for (int k = 0; k < 100; ++k) p.data()[k] = 1;
  for (int k = 50; k < 150; ++k) g.data()[k] = 1;
  const double d = dice(p, g, 1);
  pass = pass && d == 0.5;

  const Spacing sp{1.5, 1.5, 10.0};
  LabelVolume a(1, 10, 10), b(1, 10, 10);
  a(0, 2, 3) = 1;
  b(0, 6, 3) = 1;
  const auto hd = hausdorff(a, b, 1, sp);
  pass = pass && hd && std::abs(*hd - 6.0) < 1e-12;

  Subject s;
  s.labels = LabelVolume(4, 25, 40);
  s.image = ImageVolume(4, 25, 40);
  s.spacing = sp;
  for (int k = 0; k < 1000; ++k) s.labels.data()[k] = 3;
  const double vol = ventricular_volumes(s)[3];
  pass = pass && std::abs(vol - 22.5) < 1e-12;
  report.line(10, pass, "metric oracles",
              "dice " + fmt(d) + ", hausdorff " + (hd ? fmt(*hd) : std::string("undefined")) + " mm, volume " +
                  fmt(vol) + " mL");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return selected.empty() || selected.count(id); };

  Report report;
  Fixture fx;
  const auto t0 = Clock::now();
  auto guarded = [&](int id, const std::string& title, const std::function<void()>& f) {
    if (!want(id)) return;
    try {
      f();
    } catch (const std::exception& e) {
      report.line(id, false, title, std::string("exception: ") + e.what());
    }
  };
  guarded(1, "numeric core", [&] { numeric_core(report); });
  guarded(2, "correlation identity", [&] { correlation_identity(report); });
  guarded(10, "metric oracles", [&] { metric_oracles(report); });
  guarded(3, "VAE contracts", [&] { vae_contracts(report, fx); });
  guarded(4, "interpolation contracts", [&] { interpolation_contracts(report, fx); });
  guarded(5, "pathology synthesis trend", [&] { pathology_trend(report, fx); });
  guarded(6, "3D consistency", [&] { consistency_improvement(report, fx); });
  guarded(7, "latent clustering", [&] { latent_clustering(report, fx); });
  guarded(8, "generator label adherence", [&] { generator_adherence(report, fx); });
  guarded(9, "augmentation benefit", [&] { augmentation_experiment(report, fx); });
  std::ostringstream summary;
  summary << "acceptance: " << report.failures << " failed, total " << fmt(seconds_since(t0) / 60.0, 3) << " min";
  std::cout << summary.str() << std::endl;
  report.file << summary.str() << std::endl;
  return report.failures == 0 ? 0 : 1;
}
