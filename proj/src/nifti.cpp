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

#include "cmr/io/nifti.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace cmr::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

template <typename T>
void put(std::array<char, kDataOffset>& buf, int offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(const std::array<char, kDataOffset>& buf, int offset) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

std::array<char, kDataOffset> make_header(int cols, int rows, int slices, const Spacing& sp,
                                          std::int16_t datatype, std::int16_t bitpix,
                                          const std::string& description) {
  std::array<char, kDataOffset> h{};
  put<std::int32_t>(h, 0, kHeaderSize);
  put<char>(h, 38, 'r');
  std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(cols),
                                  static_cast<std::int16_t>(rows),
                                  static_cast<std::int16_t>(slices), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(h, 40 + 2 * i, dim[i]);
  put<std::int16_t>(h, 70, datatype);
  put<std::int16_t>(h, 72, bitpix);
  std::array<float, 8> pixdim{1.0f, float(sp.col_mm), float(sp.row_mm), float(sp.slice_mm),
                              1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put<float>(h, 76 + 4 * i, pixdim[i]);
  put<float>(h, 108, float(kDataOffset));
  put<float>(h, 112, 0.0f);  // scl_slope: 0 means unscaled
  put<char>(h, 123, 2);      // mm
  std::strncpy(h.data() + 148, description.c_str(), 79);
  put<std::int16_t>(h, 254, 1);  // sform_code: scanner
  put<float>(h, 280, float(sp.col_mm));
  put<float>(h, 296 + 4, float(sp.row_mm));
  put<float>(h, 312 + 8, float(sp.slice_mm));
  std::memcpy(h.data() + 344, "n+1\0", 4);
  return h;
}

struct RawVolume {
  VolumeHeader header;
  std::int16_t datatype = 0;
  float slope = 0.0f;
  float intercept = 0.0f;
  std::vector<char> bytes;
};

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUInt8: return 1;
    case kInt16: return 2;
    case kInt32: return 4;
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

RawVolume read_raw(const std::filesystem::path& path, bool with_data) {
  if (!std::filesystem::exists(path)) {
    throw MissingFileError("volume file not found: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open volume file: " + path.string());

  std::array<char, kDataOffset> h{};
  in.read(h.data(), kHeaderSize);
  if (in.gcount() != kHeaderSize) {
    throw CorruptHeaderError("truncated header in " + path.string());
  }
  const auto sizeof_hdr = get<std::int32_t>(h, 0);
  if (sizeof_hdr != kHeaderSize) {
    throw CorruptHeaderError("bad header size field in " + path.string() +
                             " (byte-swapped files are not supported)");
  }
  if (std::memcmp(h.data() + 344, "n+1", 3) != 0) {
    throw CorruptHeaderError("missing single-file magic in " + path.string());
  }

  RawVolume raw;
  const auto ndim = get<std::int16_t>(h, 40);
  if (ndim < 2 || ndim > 7) throw CorruptHeaderError("bad dimension count in " + path.string());
  std::array<int, 4> dims{1, 1, 1, 1};
  for (int i = 1; i <= std::min<int>(ndim, 3); ++i) dims[i] = get<std::int16_t>(h, 40 + 2 * i);
  for (int i = 4; i <= ndim; ++i) {
    if (get<std::int16_t>(h, 40 + 2 * i) > 1) {
      throw CorruptHeaderError("volumes with more than 3 dimensions are not supported: " +
                               path.string());
    }
  }
  if (dims[1] <= 0 || dims[2] <= 0 || dims[3] <= 0) {
    throw CorruptHeaderError("non-positive dimension in " + path.string());
  }
  raw.header.cols = dims[1];
  raw.header.rows = dims[2];
  raw.header.slices = dims[3];
  raw.header.spacing = {std::abs(get<float>(h, 76 + 8)), std::abs(get<float>(h, 76 + 4)),
                        std::abs(get<float>(h, 76 + 12))};
  if (!(raw.header.spacing.row_mm > 0 && raw.header.spacing.col_mm > 0 &&
        raw.header.spacing.slice_mm > 0)) {
    throw CorruptHeaderError("non-positive voxel spacing in " + path.string());
  }
  char descrip[81] = {};
  std::memcpy(descrip, h.data() + 148, 80);
  raw.header.description = descrip;

  raw.datatype = get<std::int16_t>(h, 70);
  const int bpv = bytes_per_voxel(raw.datatype);
  if (bpv == 0) {
    throw CorruptHeaderError("unsupported voxel datatype " + std::to_string(raw.datatype) +
                             " in " + path.string());
  }
  raw.slope = get<float>(h, 112);
  raw.intercept = get<float>(h, 116);
  const auto offset = static_cast<std::streamoff>(get<float>(h, 108));
  if (offset < kHeaderSize) throw CorruptHeaderError("bad data offset in " + path.string());

  if (with_data) {
    const std::size_t n = std::size_t(dims[1]) * dims[2] * dims[3] * bpv;
    raw.bytes.resize(n);
    in.seekg(offset);
    in.read(raw.bytes.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw CorruptHeaderError("voxel data shorter than header dimensions in " + path.string());
    }
  }
  return raw;
}

template <typename Out>
std::vector<Out> convert(const RawVolume& raw) {
  const std::size_t n = std::size_t(raw.header.cols) * raw.header.rows * raw.header.slices;
  std::vector<Out> out(n);
  auto copy = [&]<typename In>(In) {
    for (std::size_t i = 0; i < n; ++i) {
      In v;
      std::memcpy(&v, raw.bytes.data() + i * sizeof(In), sizeof(In));
      out[i] = static_cast<Out>(v);
    }
  };
  switch (raw.datatype) {
    case kUInt8: copy(std::uint8_t{}); break;
    case kInt16: copy(std::int16_t{}); break;
    case kInt32: copy(std::int32_t{}); break;
    case kFloat32: copy(float{}); break;
    case kFloat64: copy(double{}); break;
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::array<char, kDataOffset>& header,
                const void* data, std::size_t bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(header.data(), kDataOffset);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

void write_image(const std::filesystem::path& path, const ImageVolume& image,
                 const Spacing& spacing, const std::string& description) {
  auto h = make_header(image.cols(), image.rows(), image.slices(), spacing, kFloat32, 32,
                       description);
  write_file(path, h, image.data().data(), image.size() * sizeof(float));
}

void write_labels(const std::filesystem::path& path, const LabelVolume& labels,
                  const Spacing& spacing, const std::string& description) {
  auto h = make_header(labels.cols(), labels.rows(), labels.slices(), spacing, kUInt8, 8,
                       description);
  write_file(path, h, labels.data().data(), labels.size());
}

VolumeHeader read_header(const std::filesystem::path& path) {
  return read_raw(path, false).header;
}

ImageVolume read_image(const std::filesystem::path& path, VolumeHeader* header) {
  const auto raw = read_raw(path, true);
  ImageVolume vol(raw.header.slices, raw.header.rows, raw.header.cols);
  vol.data() = convert<float>(raw);
  if (raw.slope != 0.0f && std::isfinite(raw.slope)) {
    for (auto& v : vol.data()) v = v * raw.slope + raw.intercept;
  }
  if (header) *header = raw.header;
  return vol;
}

LabelVolume read_labels(const std::filesystem::path& path, VolumeHeader* header) {
  const auto raw = read_raw(path, true);
  const auto values = convert<double>(raw);
  LabelVolume vol(raw.header.slices, raw.header.rows, raw.header.cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= 0.0 && v < kNumClasses) || v != std::floor(v)) {
      throw LabelDomainError("label file " + path.string() + " contains value " +
                             std::to_string(v) + " outside {0,1,2,3}");
    }
    vol.data()[i] = static_cast<std::uint8_t>(v);
  }
  if (header) *header = raw.header;
  return vol;
}

}  // namespace cmr::io
