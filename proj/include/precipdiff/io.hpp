/*
 * Copyright (c) 2026, The precipdiff Authors.
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
#include <string>
#include <vector>

#include <json.hpp>

#include "precipdiff/grid.hpp"

namespace precipdiff {

// GridPack layout:
//   u64 LE  header length in bytes
//   header  UTF-8 JSON (dims, dim_names, variable, unit_tag, lat0, lon0,
//           dlat, dlon, timestamp)
//   payload float32 LE, row-major over dims

void write_gridpack(const GridField& field, const std::filesystem::path& path);
GridField read_gridpack(const std::filesystem::path& path);

/// Encodes to / decodes from an in-memory byte buffer.
std::vector<std::uint8_t> encode_gridpack(const GridField& field);
GridField decode_gridpack(const std::vector<std::uint8_t>& bytes);

/// A named float32 array inside a checkpoint container.
struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

/// Same framing as GridPack, but the header carries a free-form JSON config
/// block and an index of named arrays laid out back to back in the payload.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& data);

}  // namespace precipdiff
