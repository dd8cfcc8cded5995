#include <gtest/gtest.h>

#include <fstream>

#include "cdssl/checkpoint.hpp"
#include "cdssl/errors.hpp"
#include "cdssl/model.hpp"
#include "support.hpp"

using namespace cdssl;
using cdssl::testing::TempDir;

namespace {

Checkpoint sample_checkpoint() {
  EncoderConfig enc;
  enc.channels = {4, 4, 4};
  enc.feature_dim = 8;
  enc.input_size = 16;
  enc.batch_norm = true;
  ProjectionHeadConfig head;
  head.layer_dims = {8, 4};
  const ModelBundle m = build_projection_model(enc, head, 5);
  OptimizerState opt;
  opt.step = 9;
  opt.momentum["head.0.bias"] = Tensor({8}, 0.125);
  return make_checkpoint(m, &opt, 2, {{"epoch_loss", 3.5}});
}

void overwrite_u32(std::vector<std::uint8_t>& bytes, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

TEST(Checkpoint, SerializeDeserializeSerializeIsByteStable) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.epoch(), 2);
  EXPECT_EQ(back.metadata["metrics"]["epoch_loss"], 3.5);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  ASSERT_GT(bytes.size(), 32u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CDSSLCKP");
  EXPECT_EQ(bytes[8], kCheckpointMajor);
  EXPECT_EQ(bytes[12], kCheckpointMinor);
}

TEST(Checkpoint, ArraysSurviveAsFloat32) {
  Checkpoint c;
  c.metadata["note"] = "plain";
  c.arrays.push_back({"a", {2, 2}, {1.5f, -0.0f, 3.0e-38f, 1.0e30f}});
  c.arrays.push_back({"b", {1}, {0.1f}});
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(c));
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_EQ(back.arrays[0].shape, (Shape{2, 2}));
  EXPECT_EQ(back.arrays[0].values, c.arrays[0].values);
  EXPECT_EQ(back.find("b")->values[0], 0.1f);
  EXPECT_EQ(back.find("c"), nullptr);
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 7) {
    const std::span<const std::uint8_t> cut(bytes.data(), len);
    EXPECT_THROW(deserialize_checkpoint(cut), FormatError) << "length " << len;
  }
  EXPECT_THROW(deserialize_checkpoint(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 1)),
               FormatError);
}

TEST(Checkpoint, BadMagicRejected) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, NewerMajorVersionRejected) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  overwrite_u32(bytes, 8, kCheckpointMajor + 1);
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, FlippedPayloadBitFailsChecksum) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[bytes.size() - 20] ^= 0x01;
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, StoredFingerprintMustMatchConfig) {
  Checkpoint c = sample_checkpoint();
  c.metadata["fingerprint"] = "0000000000000000";
  EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(c)), FingerprintError);
}

TEST(Checkpoint, ShapeMismatchRefusedOnSave) {
  Checkpoint c;
  c.arrays.push_back({"a", {3}, {1.0f, 2.0f}});
  EXPECT_THROW(serialize_checkpoint(c), ValidationError);
}

TEST(Checkpoint, FileRoundTripRestoresModelAndOptimizer) {
  TempDir dir;
  const Checkpoint original = sample_checkpoint();
  const auto path = dir / "run" / "epoch_2.ckpt";
  std::filesystem::create_directories(path.parent_path());
  save_checkpoint(original, path);
  const Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(original));

  const ModelBundle a = model_from_checkpoint(original);
  const ModelBundle b = model_from_checkpoint(loaded);
  for (const auto& e : a.parameters()) EXPECT_EQ(e.value, b.parameters().at(e.name)) << e.name;
  EXPECT_EQ(optimizer_from_checkpoint(loaded).step, 9u);
  EXPECT_EQ(optimizer_from_checkpoint(loaded).momentum.at("head.0.bias"), Tensor({8}, 0.125));
}

TEST(Checkpoint, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST(Checkpoint, ConfigFingerprintIgnoresKeyOrder) {
  const auto a = nlohmann::json::parse(R"({"x": 1, "y": [1, 2]})");
  const auto b = nlohmann::json::parse(R"({"y": [1, 2], "x": 1})");
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
  EXPECT_NE(config_fingerprint(a), config_fingerprint(nlohmann::json::parse(R"({"x": 2, "y": [1, 2]})")));
}

TEST(Checkpoint, WrongArrayShapeOnRestoreIsFingerprintError) {
  Checkpoint c = sample_checkpoint();
  for (auto& a : c.arrays) {
    if (a.name == "head.1.bias") {
      a.shape = {2, 2};
    }
  }
  EXPECT_THROW(model_from_checkpoint(c), FingerprintError);
}
