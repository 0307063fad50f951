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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "cmr/gen/gan.hpp"
#include "cmr/io/subject_io.hpp"
#include "cmr/seg/segmenter.hpp"
#include "cmr/vae.hpp"

namespace cmr::cli {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kSidecarSuffix = ".prov.json";

struct SynthesisConfig {
  int n_target = 32;
  std::vector<double> inter_alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  int pathology_steps = 5;
  bool correlated = true;
  /// Cohort tag (NOR, DCM, HCM, DRV) -> directory of encoded latents.
  std::map<std::string, std::string> cohorts;

  void validate() const;
};

struct PipelineConfig {
  fs::path data_root;
  fs::path output_root = "cmrsynth_out";
  std::uint64_t seed = 0;
  VaeConfig vae;
  GanConfig gan;
  SegTrainConfig segmentation;
  SynthesisConfig synthesis;

  /// Nested invariants plus existence of every configured path.
  void validate() const;
};

nlohmann::json to_json(const SynthesisConfig& c);
nlohmann::json to_json(const PipelineConfig& c);

/// Applies \p file on top of the defaults; keys absent from the file keep their default.
PipelineConfig pipeline_config_from_json(const nlohmann::json& file);

/// Git blob object id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_sha1(std::string_view content);
std::string file_blob_sha1(const fs::path& path);
std::string sha1_hex(std::string_view content);

/// Hash of the canonical (sorted-key, compact) serialisation.
std::string config_hash(const nlohmann::json& j);

struct Provenance {
  std::string stage;
  nlohmann::json config;
  std::uint64_t seed = 0;
  /// Input path -> content hash.
  std::map<std::string, std::string> inputs;

  void add_input(const fs::path& path);
  /// Adds every regular file below \p dir except sidecars.
  void add_input_dir(const fs::path& dir);
  /// Identifies the computation: stage, config hash, seed and input hashes.
  std::string key() const;
};

fs::path sidecar_path(const fs::path& artifact);
/// True when the artifact and its sidecar exist, the recorded key matches and
/// the artifact content still hashes to the recorded value.
bool artifact_current(const fs::path& artifact, const Provenance& prov);
void write_sidecar(const fs::path& artifact, const Provenance& prov);

/// Writes \p content only when it differs from the file on disk.
void write_text(const fs::path& path, std::string_view content);

struct Dataset {
  fs::path dir;
  std::vector<io::ManifestEntry> entries;
  std::vector<Subject> subjects;
};

std::vector<io::ManifestEntry> read_dataset_manifest(const fs::path& dir);
Dataset load_dataset(const fs::path& dir);
void write_dataset_manifest(const fs::path& dir, const std::vector<io::ManifestEntry>& entries);

/// Runs fn(i) for i in [0, n) on up to \p jobs threads; rethrows the first failure.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});
  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void dot(int x, int y, int radius, Rgb c);
  /// Binary PPM (P6).
  void write_ppm(const fs::path& path) const;

 private:
  int width_, height_;
  std::vector<Rgb> pixels_;
};

/// Binary PGM (P5) of a row-major image mapped linearly from [lo, hi] to [0, 255].
void write_pgm(const fs::path& path, const Eigen::Ref<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>& image,
               float lo, float hi);

Rgb class_colour(int cls);
Rgb series_colour(int index);

}  // namespace cmr::cli
