#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "esdrl/checkpoint.hpp"

using namespace esdrl;

TEST(Checkpoint, ByteLayout) {
  const Mlp net(MlpSpec{1, {1}, 1, Activation::ReLU}, {0.5, -1.0, 2.0, 0.25});
  const auto bytes = encode_checkpoint(net);
  // magic, version, dim count, 3 dims, activation tag, 4 doubles
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 3 * 4 + 1 + 4 * 8);
  EXPECT_EQ(0, std::memcmp(bytes.data(), "EVSD", 4));
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 1);
  EXPECT_EQ(bytes[20], 1);
  EXPECT_EQ(bytes[24], 1);  // relu
  // 0.5 = 0x3FE0000000000000, little-endian
  const std::uint8_t half[8] = {0, 0, 0, 0, 0, 0, 0xE0, 0x3F};
  EXPECT_EQ(0, std::memcmp(bytes.data() + 25, half, 8));
}

TEST(Checkpoint, RoundTripBitExact) {
  const Mlp net = Mlp::glorot(MlpSpec{5, {64, 64}, 2, Activation::Tanh}, 17);
  const Mlp back = decode_checkpoint(encode_checkpoint(net));
  EXPECT_EQ(back.spec(), net.spec());
  EXPECT_EQ(0, std::memcmp(back.parameters().data(), net.parameters().data(), net.parameter_count() * 8));
}

TEST(Checkpoint, LinearModelRoundTrip) {
  const Mlp net(MlpSpec{3, {}, 2, Activation::Tanh}, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(net)), net);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const Mlp net = Mlp::glorot(MlpSpec{2, {3}, 2, Activation::Tanh}, 1);
  auto bytes = encode_checkpoint(net);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), std::runtime_error);

  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), std::runtime_error);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_checkpoint(truncated), std::runtime_error);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), std::runtime_error);

  auto bad_tag = bytes;
  bad_tag[4 + 4 + 4 + 3 * 4] = 7;
  EXPECT_THROW(decode_checkpoint(bad_tag), std::runtime_error);

  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>{}), std::runtime_error);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "esdrl_test_checkpoint.ckpt";
  const Mlp net = Mlp::glorot(MlpSpec{4, {6}, 3, Activation::ReLU}, 5);
  save_checkpoint(net, path.string());
  EXPECT_EQ(load_checkpoint(path.string()), net);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), std::runtime_error);
}
