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

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cmr/latent/latent.hpp"

namespace cmr::latent {

/// Named float64 matrices plus string attributes. Byte layout (little endian):
///
///   char[8]  magic "CMRLAT1\0"
///   u32      attribute count, then per attribute:
///              u32 key length, key bytes, u32 value length, value bytes
///   u32      matrix count, then per matrix:
///              u32 name length, name bytes, u32 rows, u32 cols,
///              rows * cols float64 values in row-major order
struct MatrixBundle {
  std::map<std::string, std::string> attributes;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> matrices;

  const Eigen::MatrixXd& matrix(const std::string& name) const;
  const std::string& attribute(const std::string& key) const;
};

void write_bundle(const std::filesystem::path& path, const MatrixBundle& bundle);
MatrixBundle read_bundle(const std::filesystem::path& path);

void save_latent_subject(const std::filesystem::path& path, const LatentSubject& ls);
LatentSubject load_latent_subject(const std::filesystem::path& path);

void save_pathology_stats(const std::filesystem::path& path, const PathologyStats& stats);
PathologyStats load_pathology_stats(const std::filesystem::path& path);

void save_correlation_model(const std::filesystem::path& path, const CorrelationModel& model);
CorrelationModel load_correlation_model(const std::filesystem::path& path);

}  // namespace cmr::latent
