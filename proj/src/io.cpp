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

#include "precipdiff/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <openssl/evp.h>

#include "precipdiff/errors.hpp"

namespace precipdiff {

namespace {

constexpr std::uint64_t kMaxHeaderBytes = 1ull << 26;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return std::bit_cast<float>(u);
}

std::vector<std::uint8_t> frame(const nlohmann::json& header, std::size_t payload_floats) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + 4 * payload_floats);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

struct Unframed {
  nlohmann::json header;
  const std::uint8_t* payload = nullptr;
  std::size_t payload_bytes = 0;
};

Unframed unframe(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw IoError("file too short for a header length prefix");
  const std::uint64_t len = get_u64(bytes.data());
  if (len > kMaxHeaderBytes || 8 + len > bytes.size()) throw IoError("header length exceeds file size");
  Unframed u;
  try {
    u.header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt header: ") + e.what());
  }
  if (!u.header.is_object()) throw IoError("corrupt header: not a JSON object");
  u.payload = bytes.data() + 8 + len;
  u.payload_bytes = bytes.size() - 8 - len;
  return u;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void spill(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

template <class T>
T require(const nlohmann::json& h, const char* key) {
  if (!h.contains(key)) throw IoError(std::string("corrupt header: missing '") + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw IoError(std::string("corrupt header: bad '") + key + "'");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_gridpack(const GridField& field) {
  const GridSpec& g = field.grid();
  nlohmann::json h;
  h["format"] = "gridpack";
  h["version"] = 1;
  h["variable"] = field.variable();
  h["unit_tag"] = to_string(field.unit());
  h["dims"] = field.shape();
  h["dim_names"] = field.dim_names();
  h["lat0"] = g.lat0;
  h["lon0"] = g.lon0;
  h["dlat"] = g.dlat;
  h["dlon"] = g.dlon;
  h["timestamp"] = format_timestamp(field.timestamp());
  auto out = frame(h, field.size());
  for (double v : field.values()) put_f32(out, static_cast<float>(v));
  return out;
}

GridField decode_gridpack(const std::vector<std::uint8_t>& bytes) {
  const Unframed u = unframe(bytes);
  const auto dims = require<std::vector<std::int64_t>>(u.header, "dims");
  const auto names = require<std::vector<std::string>>(u.header, "dim_names");
  if (dims.size() < 2 || names.size() != dims.size()) throw IoError("corrupt header: bad dims");
  GridSpec g{require<double>(u.header, "lat0"), require<double>(u.header, "lon0"),
             require<double>(u.header, "dlat"), require<double>(u.header, "dlon"), dims[dims.size() - 2],
             dims.back()};
  std::vector<std::int64_t> leading(dims.begin(), dims.end() - 2);
  std::vector<std::string> leading_names(names.begin(), names.end() - 2);
  GridField f;
  try {
    f = GridField(g, unit_from_string(require<std::string>(u.header, "unit_tag")),
                  require<std::string>(u.header, "variable"), leading, leading_names);
    f.set_timestamp(parse_timestamp(require<std::string>(u.header, "timestamp")));
  } catch (const ValidationError& e) {
    throw IoError(std::string("corrupt header: ") + e.what());
  }
  if (u.payload_bytes != 4 * f.size()) {
    throw IoError("payload holds " + std::to_string(u.payload_bytes) + " bytes, expected " +
                  std::to_string(4 * f.size()));
  }
  auto values = f.values();
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = get_f32(u.payload + 4 * k);
  return f;
}

void write_gridpack(const GridField& field, const std::filesystem::path& path) {
  spill(encode_gridpack(field), path);
}

GridField read_gridpack(const std::filesystem::path& path) {
  try {
    return decode_gridpack(slurp(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

const NamedArray& Checkpoint::at(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw IoError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json h;
  h["format"] = "precipdiff-checkpoint";
  h["version"] = 1;
  h["config"] = ckpt.config;
  h["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    const auto n = std::accumulate(a.shape.begin(), a.shape.end(), std::int64_t{1}, std::multiplies<>());
    if (static_cast<std::size_t>(n) != a.data.size()) throw IoError("array '" + a.name + "' shape/data mismatch");
    h["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.data.size();
  }
  auto out = frame(h, offset);
  for (const auto& a : ckpt.arrays) {
    for (float v : a.data) put_f32(out, v);
  }
  spill(out, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const Unframed u = unframe(bytes);
  if (u.header.value("format", "") != "precipdiff-checkpoint") throw IoError(path.string() + ": not a checkpoint");
  Checkpoint c;
  c.config = u.header.value("config", nlohmann::json::object());
  const auto index = require<nlohmann::json>(u.header, "arrays");
  const std::size_t total = u.payload_bytes / 4;
  if (u.payload_bytes % 4 != 0) throw IoError(path.string() + ": truncated payload");
  for (const auto& e : index) {
    NamedArray a;
    a.name = require<std::string>(e, "name");
    a.shape = require<std::vector<std::int64_t>>(e, "shape");
    const auto offset = require<std::size_t>(e, "offset");
    const auto n = static_cast<std::size_t>(
        std::accumulate(a.shape.begin(), a.shape.end(), std::int64_t{1}, std::multiplies<>()));
    if (offset + n > total) throw IoError(path.string() + ": truncated payload");
    a.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) a.data[k] = get_f32(u.payload + 4 * (offset + k));
    c.arrays.push_back(std::move(a));
  }
  return c;
}

namespace {

std::string digest_hex(const unsigned char* md, unsigned len) {
  std::ostringstream os;
  for (unsigned k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
  return os.str();
}

std::string sha256_bytes(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
  return digest_hex(md, len);
}

}  // namespace

std::string sha256_hex(const std::string& data) { return sha256_bytes(data.data(), data.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return sha256_bytes(bytes.data(), bytes.size());
}

}  // namespace precipdiff
