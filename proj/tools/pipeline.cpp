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

#include "pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "cmr/io/subject_io.hpp"

namespace cmr::cli {

void SynthesisConfig::validate() const {
  if (n_target < 2) throw InvalidArgumentError("synthesis.n_target must be at least 2");
  if (pathology_steps < 1) throw InvalidArgumentError("synthesis.pathology_steps must be positive");
  if (inter_alphas.empty()) throw InvalidArgumentError("synthesis.inter_alphas is empty");
  for (double a : inter_alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgumentError("synthesis.inter_alphas must lie in [0, 1]");
  }
  for (const auto& [tag, dir] : cohorts) {
    parse_pathology(tag);
    if (!fs::is_directory(dir)) throw InvalidArgumentError("synthesis.cohorts." + tag + ": no such directory " + dir);
  }
}

void PipelineConfig::validate() const {
  if (!data_root.empty() && !fs::is_directory(data_root)) {
    throw InvalidArgumentError("paths.data_root: no such directory " + data_root.string());
  }
  if (output_root.empty()) throw InvalidArgumentError("paths.output_root is empty");
  vae.validate();
  gan.validate();
  segmentation.validate();
  synthesis.validate();
}

nlohmann::json to_json(const SynthesisConfig& c) {
  return {{"n_target", c.n_target},
          {"inter_alphas", c.inter_alphas},
          {"pathology_steps", c.pathology_steps},
          {"correlated", c.correlated},
          {"cohorts", c.cohorts}};
}

nlohmann::json to_json(const PipelineConfig& c) {
  return {{"paths", {{"data_root", c.data_root.string()}, {"output_root", c.output_root.string()}}},
          {"seed", c.seed},
          {"vae", to_json(c.vae)},
          {"gan", to_json(c.gan)},
          {"segmentation", to_json(c.segmentation)},
          {"synthesis", to_json(c.synthesis)}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& file) {
  if (!file.is_object()) throw InvalidArgumentError("config: top level must be an object");
  static const std::vector<std::string> known{"paths", "seed", "vae", "gan", "segmentation", "augment", "synthesis"};
  for (const auto& [key, value] : file.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InvalidArgumentError("config: unknown key '" + key + "'");
    }
  }
  nlohmann::json j = to_json(PipelineConfig{});
  j.merge_patch(file);
  // A top-level augment section is shorthand for segmentation.augment.
  if (file.contains("augment")) j["segmentation"]["augment"].merge_patch(file["augment"]);
  PipelineConfig c;
  try {
    c.data_root = j["paths"].value("data_root", std::string{});
    c.output_root = j["paths"].value("output_root", std::string{"cmrsynth_out"});
    c.seed = j.value("seed", std::uint64_t{0});
    c.vae = vae_config_from_json(j["vae"]);
    c.gan = gan_config_from_json(j["gan"]);
    c.segmentation = seg_config_from_json(j["segmentation"]);
    const auto& s = j["synthesis"];
    c.synthesis.n_target = s.value("n_target", c.synthesis.n_target);
    c.synthesis.inter_alphas = s.value("inter_alphas", c.synthesis.inter_alphas);
    c.synthesis.pathology_steps = s.value("pathology_steps", c.synthesis.pathology_steps);
    c.synthesis.correlated = s.value("correlated", c.synthesis.correlated);
    c.synthesis.cohorts = s.value("cohorts", c.synthesis.cohorts);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgumentError(std::string("config: ") + e.what());
  }
  return c;
}

namespace {

std::string digest_hex(std::initializer_list<std::string_view> parts) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1;
  for (auto p : parts) ok = ok && EVP_DigestUpdate(ctx, p.data(), p.size()) == 1;
  ok = ok && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string sha1_hex(std::string_view content) { return digest_hex({content}); }

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size());
  return digest_hex({header, std::string_view("\0", 1), content});
}

std::string file_blob_sha1(const fs::path& path) { return git_blob_sha1(read_file(path)); }

std::string config_hash(const nlohmann::json& j) { return sha1_hex(j.dump()); }

void Provenance::add_input(const fs::path& path) { inputs[path.lexically_normal().string()] = file_blob_sha1(path); }

void Provenance::add_input_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingFileError("no such directory " + dir.string());
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name.ends_with(kSidecarSuffix)) continue;
    add_input(e.path());
  }
}

std::string Provenance::key() const {
  nlohmann::json j{{"stage", stage}, {"config_hash", config_hash(config)}, {"seed", seed}, {"inputs", inputs}};
  return sha1_hex(j.dump());
}

fs::path sidecar_path(const fs::path& artifact) {
  fs::path p = artifact;
  p += kSidecarSuffix;
  return p;
}

bool artifact_current(const fs::path& artifact, const Provenance& prov) {
  const auto side = sidecar_path(artifact);
  if (!fs::is_regular_file(artifact) || !fs::is_regular_file(side)) return false;
  try {
    const auto j = nlohmann::json::parse(read_file(side));
    return j.at("key") == prov.key() && j.at("output_sha1") == file_blob_sha1(artifact);
  } catch (const std::exception&) {
    return false;
  }
}

void write_sidecar(const fs::path& artifact, const Provenance& prov) {
  nlohmann::json j{{"artifact", artifact.filename().string()},
                   {"stage", prov.stage},
                   {"config", prov.config},
                   {"config_hash", config_hash(prov.config)},
                   {"seed", prov.seed},
                   {"inputs", prov.inputs},
                   {"key", prov.key()},
                   {"output_sha1", file_blob_sha1(artifact)}};
  write_text(sidecar_path(artifact), j.dump(2) + "\n");
}

void write_text(const fs::path& path, std::string_view content) {
  if (fs::is_regular_file(path)) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (ss.str() == content) return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::vector<io::ManifestEntry> read_dataset_manifest(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingFileError("dataset directory not found: " + dir.string());
  return io::read_manifest(dir / kManifestName);
}

Dataset load_dataset(const fs::path& dir) {
  Dataset d{dir, read_dataset_manifest(dir), {}};
  for (const auto& e : d.entries) d.subjects.push_back(io::load_subject(io::image_path(dir, e.subject_id)));
  return d;
}

void write_dataset_manifest(const fs::path& dir, const std::vector<io::ManifestEntry>& entries) {
  io::write_manifest(dir / kManifestName, entries);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < n;) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height, background) {
  if (width <= 0 || height <= 0) throw InvalidArgumentError("Canvas: non-positive size");
}

void Canvas::set(int x, int y, Rgb c) {
  if (x >= 0 && x < width_ && y >= 0 && y < height_) pixels_[static_cast<std::size_t>(y) * width_ + x] = c;
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::dot(int x, int y, int radius, Rgb c) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) set(x + dx, y + dy, c);
}

void Canvas::write_ppm(const fs::path& path) const {
  std::string data = "P6\n" + std::to_string(width_) + " " + std::to_string(height_) + "\n255\n";
  for (const auto& p : pixels_) {
    data += static_cast<char>(p.r);
    data += static_cast<char>(p.g);
    data += static_cast<char>(p.b);
  }
  write_text(path, data);
}

void write_pgm(const fs::path& path, const Eigen::Ref<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>& image,
               float lo, float hi) {
  if (!(hi > lo)) throw InvalidArgumentError("write_pgm: empty intensity window");
  std::string data = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const float t = std::clamp((image(r, c) - lo) / (hi - lo), 0.0f, 1.0f);
      data += static_cast<char>(static_cast<std::uint8_t>(std::lround(255.0f * t)));
    }
  write_text(path, data);
}

Rgb class_colour(int cls) {
  static const Rgb colours[kNumClasses] = {{0, 0, 0}, {230, 60, 60}, {60, 200, 90}, {60, 110, 235}};
  return colours[std::clamp(cls, 0, kNumClasses - 1)];
}

Rgb series_colour(int index) {
  static const Rgb colours[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
  return colours[static_cast<std::size_t>(index) % std::size(colours)];
}

}  // namespace cmr::cli
