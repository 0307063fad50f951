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

#include "json.hpp"

#include "cmr/nn/layers.hpp"

namespace cmr::nn {

/// Binary checkpoint: the 8-byte magic "CMRCKPT1", a little-endian u64
/// length, a JSON document (caller metadata under "meta", tensor table
/// under "tensors"), then every tensor as raw little-endian float32 in
/// table order.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const ParameterList<float>& params);

/// Reads the metadata block only.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

/// Loads tensors into \p params by name; every parameter must be present
/// with a matching size.
nlohmann::json read_checkpoint(const std::filesystem::path& path, const ParameterList<float>& params);

}  // namespace cmr::nn
