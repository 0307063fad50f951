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

#include "cmr/io/subject_io.hpp"

#include <fstream>
#include <sstream>

#include "cmr/io/nifti.hpp"

namespace cmr::io {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + ".nii");
}

std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + "_gt.nii");
}

std::string encode_meta(const SubjectMeta& meta) {
  std::ostringstream os;
  os << "id=" << meta.subject_id << ";pathology=" << to_string(meta.pathology)
     << ";vendor=" << meta.vendor << ";phase=" << to_string(meta.phase);
  return os.str();
}

SubjectMeta decode_meta(const std::string& text) {
  SubjectMeta meta;
  std::istringstream is(text);
  std::string field;
  while (std::getline(is, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const auto key = trim(field.substr(0, eq));
    const auto value = trim(field.substr(eq + 1));
    if (key == "id") {
      meta.subject_id = value;
    } else if (key == "pathology") {
      meta.pathology = parse_pathology(value);
    } else if (key == "vendor") {
      meta.vendor = value;
    } else if (key == "phase") {
      meta.phase = parse_phase(value);
    }
  }
  return meta;
}

Subject load_subject(const std::filesystem::path& image_file) {
  Subject subject;
  VolumeHeader header;
  subject.image = read_image(image_file, &header);
  subject.spacing = header.spacing;
  try {
    subject.meta = decode_meta(header.description);
  } catch (const InvalidArgumentError& e) {
    throw CorruptHeaderError("bad metadata in " + image_file.string() + ": " + e.what());
  }
  if (subject.meta.subject_id.empty()) subject.meta.subject_id = image_file.stem().string();

  const auto gt = image_file.parent_path() / (image_file.stem().string() + "_gt.nii");
  if (std::filesystem::exists(gt)) {
    subject.labels = read_labels(gt);
    if (!subject.labels.same_shape(subject.image)) {
      throw ShapeMismatchError("label volume " + gt.string() + " does not match image shape");
    }
  }
  return subject;
}

std::filesystem::path save_subject(const Subject& subject, const std::filesystem::path& dir) {
  check_subject(subject);
  const auto& id = subject.meta.subject_id;
  if (id.empty()) throw InvalidArgumentError("save_subject: empty subject id");
  const auto meta = encode_meta(subject.meta);
  const auto img = image_path(dir, id);
  write_image(img, subject.image, subject.spacing, meta);
  if (!subject.labels.empty()) write_labels(label_path(dir, id), subject.labels, subject.spacing, meta);
  return img;
}

ManifestEntry manifest_entry(const SubjectMeta& meta) {
  return {meta.subject_id, meta.pathology, meta.vendor, meta.phase};
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("manifest not found: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgumentError(path.string() + ":" + std::to_string(lineno) +
                                 ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "subject") {
      entries.push_back({value, Pathology::UNKNOWN, "", Phase::ED});
      continue;
    }
    if (entries.empty()) {
      throw InvalidArgumentError(path.string() + ":" + std::to_string(lineno) +
                                 ": field before first 'subject' line");
    }
    auto& e = entries.back();
    if (key == "pathology") {
      e.pathology = parse_pathology(value);
    } else if (key == "vendor") {
      e.vendor = value;
    } else if (key == "phase") {
      e.phase = parse_phase(value);
    } else {
      throw InvalidArgumentError(path.string() + ":" + std::to_string(lineno) +
                                 ": unknown key '" + key + "'");
    }
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << "# cmrsynth dataset manifest\n";
  for (const auto& e : entries) {
    out << "\nsubject = " << e.subject_id << "\npathology = " << to_string(e.pathology)
        << "\nvendor = " << e.vendor << "\nphase = " << to_string(e.phase) << "\n";
  }
}

}  // namespace cmr::io
