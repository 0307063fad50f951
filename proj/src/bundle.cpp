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

#include "cmr/latent/bundle.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cmr::latent {

static_assert(std::endian::native == std::endian::little, "bundle files are written in host byte order");

namespace {

constexpr char kMagic[8] = {'C', 'M', 'R', 'L', 'A', 'T', '1', '\0'};

void put_u32(std::ofstream& out, std::size_t v) {
  if (v > UINT32_MAX) throw InvalidArgumentError("bundle: field too large");
  const auto x = static_cast<std::uint32_t>(v);
  out.write(reinterpret_cast<const char*>(&x), 4);
}

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void put_string(std::ofstream& out, const std::string& s) {
  put_u32(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Reader {
  std::ifstream in;
  std::string where;

  std::uint32_t u32() {
    std::uint32_t x = 0;
    if (!in.read(reinterpret_cast<char*>(&x), 4)) throw CorruptHeaderError(where + ": truncated bundle");
    return x;
  }
  std::string str() {
    const auto n = u32();
    if (n > (1u << 20)) throw CorruptHeaderError(where + ": implausible string length");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw CorruptHeaderError(where + ": truncated bundle");
    return s;
  }
};

}  // namespace

const Eigen::MatrixXd& MatrixBundle::matrix(const std::string& name) const {
  for (const auto& [n, m] : matrices)
    if (n == name) return m;
  throw CorruptHeaderError("bundle has no matrix '" + name + "'");
}

const std::string& MatrixBundle::attribute(const std::string& key) const {
  const auto it = attributes.find(key);
  if (it == attributes.end()) throw CorruptHeaderError("bundle has no attribute '" + key + "'");
  return it->second;
}

void write_bundle(const std::filesystem::path& path, const MatrixBundle& bundle) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, bundle.attributes.size());
  for (const auto& [k, v] : bundle.attributes) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, bundle.matrices.size());
  for (const auto& [name, m] : bundle.matrices) {
    put_string(out, name);
    put_u32(out, static_cast<std::size_t>(m.rows()));
    put_u32(out, static_cast<std::size_t>(m.cols()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  }
  if (!out) throw InvalidArgumentError("failed writing " + path.string());
}

MatrixBundle read_bundle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError(path.string() + " does not exist");
  Reader r{std::ifstream(path, std::ios::binary), path.string()};
  char magic[8];
  if (!r.in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CorruptHeaderError(path.string() + ": not a latent bundle");
  }
  MatrixBundle b;
  const auto n_attr = r.u32();
  for (std::uint32_t i = 0; i < n_attr; ++i) {
    auto k = r.str();
    b.attributes[k] = r.str();
  }
  const auto n_mat = r.u32();
  for (std::uint32_t i = 0; i < n_mat; ++i) {
    auto name = r.str();
    const auto rows = r.u32(), cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) throw CorruptHeaderError(path.string() + ": matrix too large");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    if (!r.in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)))) {
      throw CorruptHeaderError(path.string() + ": truncated matrix " + name);
    }
    b.matrices.emplace_back(std::move(name), Eigen::MatrixXd(rm));
  }
  return b;
}

namespace {

void expect_kind(const MatrixBundle& b, const std::string& kind, const std::filesystem::path& path) {
  const auto it = b.attributes.find("kind");
  if (it == b.attributes.end() || it->second != kind) {
    throw CorruptHeaderError(path.string() + " does not hold a " + kind);
  }
}

}  // namespace

void save_latent_subject(const std::filesystem::path& path, const LatentSubject& ls) {
  MatrixBundle b;
  b.attributes = {{"kind", "latent_subject"}, {"subject_id", ls.subject_id}};
  b.matrices.emplace_back("codes", ls.codes);
  write_bundle(path, b);
}

LatentSubject load_latent_subject(const std::filesystem::path& path) {
  const auto b = read_bundle(path);
  expect_kind(b, "latent_subject", path);
  return {b.matrix("codes"), b.attribute("subject_id")};
}

void save_pathology_stats(const std::filesystem::path& path, const PathologyStats& stats) {
  MatrixBundle b;
  b.attributes = {{"kind", "pathology_stats"},
                  {"pathology", std::string(to_string(stats.pathology))},
                  {"n_subjects", std::to_string(stats.n_subjects)}};
  b.matrices = {{"mu", stats.mu}, {"sigma", stats.sigma}, {"min", stats.min}, {"max", stats.max}};
  write_bundle(path, b);
}

PathologyStats load_pathology_stats(const std::filesystem::path& path) {
  const auto b = read_bundle(path);
  expect_kind(b, "pathology_stats", path);
  PathologyStats s;
  s.mu = b.matrix("mu");
  s.sigma = b.matrix("sigma");
  s.min = b.matrix("min");
  s.max = b.matrix("max");
  s.pathology = parse_pathology(b.attribute("pathology"));
  s.n_subjects = std::stoi(b.attribute("n_subjects"));
  return s;
}

void save_correlation_model(const std::filesystem::path& path, const CorrelationModel& model) {
  MatrixBundle b;
  b.attributes = {{"kind", "correlation_model"},
                  {"jitter_z", exact(model.jitter_z)},
                  {"jitter_s", exact(model.jitter_s)}};
  b.matrices = {{"corr_z", model.corr_z}, {"chol_z", model.chol_z}, {"corr_s", model.corr_s}, {"chol_s", model.chol_s}};
  write_bundle(path, b);
}

CorrelationModel load_correlation_model(const std::filesystem::path& path) {
  const auto b = read_bundle(path);
  expect_kind(b, "correlation_model", path);
  CorrelationModel m;
  m.corr_z = b.matrix("corr_z");
  m.chol_z = b.matrix("chol_z");
  m.corr_s = b.matrix("corr_s");
  m.chol_s = b.matrix("chol_s");
  m.jitter_z = std::stod(b.attribute("jitter_z"));
  m.jitter_s = std::stod(b.attribute("jitter_s"));
  return m;
}

}  // namespace cmr::latent
