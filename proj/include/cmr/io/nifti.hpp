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
#include <string>

#include "cmr/subject.hpp"

namespace cmr::io {

/// Header fields of a single-file NIfTI-1 volume that this toolkit uses.
struct VolumeHeader {
  int cols = 0;
  int rows = 0;
  int slices = 0;
  Spacing spacing;
  std::string description;  // 80-byte descrip field, used for subject metadata
};

void write_image(const std::filesystem::path& path, const ImageVolume& image,
                 const Spacing& spacing, const std::string& description = {});
void write_labels(const std::filesystem::path& path, const LabelVolume& labels,
                  const Spacing& spacing, const std::string& description = {});

/// Reads any supported numeric voxel type and converts to float.
ImageVolume read_image(const std::filesystem::path& path, VolumeHeader* header = nullptr);

/// Reads an integer-valued volume; throws LabelDomainError on values outside {0..3}.
LabelVolume read_labels(const std::filesystem::path& path, VolumeHeader* header = nullptr);

VolumeHeader read_header(const std::filesystem::path& path);

}  // namespace cmr::io
