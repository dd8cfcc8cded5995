#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdssl/tensor.hpp"

namespace cdssl {

inline constexpr std::uint32_t kCheckpointMajor = 1;
inline constexpr std::uint32_t kCheckpointMinor = 0;

struct CheckpointArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// In-memory checkpoint: a JSON metadata document plus named float32 arrays.
///
/// On disk:
///   "CDSSLCKP" | u32 major | u32 minor | u64 metadata length | metadata JSON |
///   float32 little-endian payload | u64 FNV-1a checksum of all preceding bytes
/// The metadata written to disk additionally carries `format_version` and a
/// `tensors` list of {name, shape, offset} with byte offsets into the payload.
struct Checkpoint {
  std::uint32_t format_major = kCheckpointMajor;
  std::uint32_t format_minor = kCheckpointMinor;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(std::string_view name) const;
  std::string fingerprint() const;
  int epoch() const;
};

/// Stable hash of a canonical JSON config (keys sorted, compact dump).
std::string config_fingerprint(const nlohmann::json& config);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError on bad magic, newer major version, truncation or a
/// checksum mismatch, and FingerprintError when the stored fingerprint does
/// not match the stored config.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cdssl
