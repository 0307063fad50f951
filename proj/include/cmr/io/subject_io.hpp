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
#include <vector>

#include "cmr/subject.hpp"

namespace cmr::io {

/// Image file name for a subject id, e.g. "P001.nii".
std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id);
/// Sibling label file name, e.g. "P001_gt.nii".
std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id);

/// Loads `<id>.nii` and, when present, the sibling `<id>_gt.nii`.
///
/// Spacing comes from the image header; metadata from the header description
/// (falls back to the file stem for the subject id). Missing files, corrupt
/// headers, shape mismatches and out-of-domain labels each raise their own
/// error type.
Subject load_subject(const std::filesystem::path& image_file);

/// Writes image and labels into \p dir; returns the image path.
std::filesystem::path save_subject(const Subject& subject, const std::filesystem::path& dir);

std::string encode_meta(const SubjectMeta& meta);
SubjectMeta decode_meta(const std::string& text);

struct ManifestEntry {
  std::string subject_id;
  Pathology pathology = Pathology::UNKNOWN;
  std::string vendor;
  Phase phase = Phase::ED;

  bool operator==(const ManifestEntry&) const = default;
};

/// Key/value text manifest. Each record starts with a `subject = <id>` line;
/// blank lines and `#` comments are ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

ManifestEntry manifest_entry(const SubjectMeta& meta);

}  // namespace cmr::io
