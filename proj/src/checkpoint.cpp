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

#include "cmr/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace cmr::nn {
namespace {

constexpr char kMagic[8] = {'C', 'M', 'R', 'C', 'K', 'P', 'T', '1'};

struct Header {
  nlohmann::json doc;
  std::streamoff data_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
    throw CorruptHeaderError("not a checkpoint file: " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ull << 32)) throw CorruptHeaderError("bad checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw CorruptHeaderError("truncated checkpoint: " + path.string());
  Header h;
  try {
    h.doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeaderError("bad checkpoint metadata in " + path.string() + ": " + e.what());
  }
  h.data_offset = static_cast<std::streamoff>(8 + sizeof len + len);
  return h;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const ParameterList<float>& params) {
  nlohmann::json doc;
  doc["meta"] = meta;
  doc["tensors"] = nlohmann::json::array();
  for (const auto& p : params) {
    doc["tensors"].push_back({{"name", p.name}, {"size", p.param->value.size()}});
  }
  const std::string text = doc.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.param->value.data()),
              static_cast<std::streamsize>(p.param->value.size() * sizeof(float)));
  }
  if (!out) throw Error("write failed for checkpoint " + path.string());
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("checkpoint not found: " + path.string());
  return read_header(in, path).doc.at("meta");
}

nlohmann::json read_checkpoint(const std::filesystem::path& path, const ParameterList<float>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("checkpoint not found: " + path.string());
  const auto header = read_header(in, path);
  std::map<std::string, std::pair<std::streamoff, std::int64_t>> table;
  std::streamoff offset = header.data_offset;
  for (const auto& t : header.doc.at("tensors")) {
    const auto size = t.at("size").get<std::int64_t>();
    table[t.at("name").get<std::string>()] = {offset, size};
    offset += static_cast<std::streamoff>(size * sizeof(float));
  }
  for (const auto& p : params) {
    auto it = table.find(p.name);
    if (it == table.end()) throw CorruptHeaderError("checkpoint " + path.string() + " lacks tensor " + p.name);
    if (it->second.second != p.param->value.size()) {
      throw ShapeMismatchError("checkpoint tensor " + p.name + " has the wrong size");
    }
    in.seekg(it->second.first);
    in.read(reinterpret_cast<char*>(p.param->value.data()),
            static_cast<std::streamsize>(p.param->value.size() * sizeof(float)));
    if (!in) throw CorruptHeaderError("truncated tensor data in " + path.string());
  }
  return header.doc.at("meta");
}

}  // namespace cmr::nn
