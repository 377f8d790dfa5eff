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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "precipdiff/errors.hpp"
#include "precipdiff/io.hpp"

using namespace precipdiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "precipdiff_test_io";
  fs::create_directories(dir);
  return dir / name;
}

GridField sample_field() {
  GridField f(GridSpec{15.025, 70.025, 0.05, 0.05, 4, 6}, UnitTag::kNorm, "residual", {2}, {"member"});
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (double& v : f.values()) v = static_cast<float>(n(rng));
  f.set_timestamp(parse_timestamp("2021-08-01T01:00:00Z"));
  return f;
}

}  // namespace

TEST(GridPack, RoundTripBitIdentical) {
  const GridField f = sample_field();
  const auto path = scratch("rt.gp");
  write_gridpack(f, path);
  const GridField g = read_gridpack(path);
  EXPECT_EQ(g.grid(), f.grid());
  EXPECT_EQ(g.shape(), f.shape());
  EXPECT_EQ(g.dim_names(), f.dim_names());
  EXPECT_EQ(g.unit(), f.unit());
  EXPECT_EQ(g.variable(), f.variable());
  EXPECT_EQ(g.timestamp(), f.timestamp());
  EXPECT_EQ(g.storage(), f.storage());
}

TEST(GridPack, LittleEndianLayout) {
  GridField f(GridSpec{0, 0, 1, 1, 1, 1}, UnitTag::kMm, "TP");
  f.values()[0] = 1.0;
  const auto bytes = encode_gridpack(f);
  std::uint64_t len = 0;
  for (int k = 0; k < 8; ++k) len |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  ASSERT_EQ(bytes.size(), 8 + len + 4);
  const std::string header(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  EXPECT_NE(header.find("\"unit_tag\":\"mm\""), std::string::npos);
  // 1.0f = 0x3F800000 stored least significant byte first.
  EXPECT_EQ(bytes[8 + len + 0], 0x00);
  EXPECT_EQ(bytes[8 + len + 1], 0x00);
  EXPECT_EQ(bytes[8 + len + 2], 0x80);
  EXPECT_EQ(bytes[8 + len + 3], 0x3F);
}

TEST(GridPack, TruncatedPayloadIsError) {
  auto bytes = encode_gridpack(sample_field());
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_gridpack(bytes), IoError);
  const auto path = scratch("trunc.gp");
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(read_gridpack(path), IoError);
}

TEST(GridPack, CorruptHeaderIsError) {
  auto bytes = encode_gridpack(sample_field());
  bytes[9] = '#';
  EXPECT_THROW(decode_gridpack(bytes), IoError);
  std::vector<std::uint8_t> tiny{1, 2, 3};
  EXPECT_THROW(decode_gridpack(tiny), IoError);
  auto huge = encode_gridpack(sample_field());
  huge[7] = 0x7F;
  EXPECT_THROW(decode_gridpack(huge), IoError);
  EXPECT_THROW(read_gridpack(scratch("does_not_exist.gp")), IoError);
}

TEST(Checkpoint, RoundTrip) {
  Checkpoint c;
  c.config = {{"kind", "vae"}, {"latent_channels", 16}};
  c.arrays.push_back({"enc.weight", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.arrays.push_back({"enc.bias", {2}, {-0.5f, 0.25f}});
  const auto path = scratch("ckpt.bin");
  write_checkpoint(c, path);
  const Checkpoint d = read_checkpoint(path);
  EXPECT_EQ(d.config, c.config);
  ASSERT_EQ(d.arrays.size(), 2u);
  EXPECT_EQ(d.at("enc.weight").data, c.arrays[0].data);
  EXPECT_EQ(d.at("enc.bias").shape, (std::vector<std::int64_t>{2}));
  EXPECT_THROW(d.at("missing"), IoError);
  EXPECT_THROW(read_checkpoint(scratch("does_not_exist.bin")), IoError);
}

TEST(Checksum, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
