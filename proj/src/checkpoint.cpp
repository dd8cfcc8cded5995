#include "cdssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cdssl/errors.hpp"
#include "cdssl/hash.hpp"

namespace cdssl {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'S', 'S', 'L', 'C', 'K', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[offset + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint64_t checksum(std::span<const std::uint8_t> bytes) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace

const CheckpointArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

std::string Checkpoint::fingerprint() const {
  return metadata.contains("fingerprint") ? metadata["fingerprint"].get<std::string>() : std::string{};
}

int Checkpoint::epoch() const { return metadata.contains("epoch") ? metadata["epoch"].get<int>() : 0; }

std::string config_fingerprint(const nlohmann::json& config) { return hex64(fnv1a64(config.dump())); }

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json meta = checkpoint.metadata;
  meta["format_version"] = std::to_string(checkpoint.format_major) + "." + std::to_string(checkpoint.format_minor);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : checkpoint.arrays) {
    if (a.values.size() != shape_numel(a.shape)) {
      throw ValidationError("checkpoint array " + a.name + " does not match its shape");
    }
    tensors.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.values.size() * sizeof(float);
  }
  meta["tensors"] = std::move(tensors);
  const std::string meta_text = meta.dump();

  std::vector<std::uint8_t> out;
  out.reserve(32 + meta_text.size() + offset);
  for (char c : kMagic) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, checkpoint.format_major);
  put_u32(out, checkpoint.format_minor);
  put_u64(out, meta_text.size());
  out.insert(out.end(), meta_text.begin(), meta_text.end());
  for (const auto& a : checkpoint.arrays)
    for (float v : a.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  put_u64(out, checksum(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t header = 8 + 4 + 4 + 8;
  if (bytes.size() < header + 8) throw FormatError("checkpoint truncated: header incomplete");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("not a checkpoint file (bad magic)");

  Checkpoint ckpt;
  ckpt.format_major = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  ckpt.format_minor = static_cast<std::uint32_t>(get_le(bytes, 12, 4));
  if (ckpt.format_major != kCheckpointMajor) {
    throw FormatError("checkpoint format version " + std::to_string(ckpt.format_major) + "." +
                      std::to_string(ckpt.format_minor) + " is not supported (reader is " +
                      std::to_string(kCheckpointMajor) + "." + std::to_string(kCheckpointMinor) + ")");
  }
  const std::uint64_t meta_len = get_le(bytes, 16, 8);
  if (meta_len > bytes.size() - header - 8) throw FormatError("checkpoint truncated: metadata incomplete");

  const std::size_t body_end = bytes.size() - 8;
  if (checksum(bytes.first(body_end)) != get_le(bytes, body_end, 8)) {
    throw FormatError("checkpoint checksum mismatch (truncated or corrupted file)");
  }

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + header, bytes.begin() + header + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (!meta.contains("tensors") || !meta["tensors"].is_array()) {
    throw FormatError("checkpoint metadata lacks a tensor manifest");
  }

  const std::size_t payload_begin = header + meta_len;
  const std::size_t payload_size = body_end - payload_begin;
  std::size_t expected_offset = 0;
  try {
    for (const auto& t : meta["tensors"]) {
      CheckpointArray a;
      a.name = t.at("name").get<std::string>();
      a.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const std::size_t count = shape_numel(a.shape);
      if (offset != expected_offset || offset + count * sizeof(float) > payload_size) {
        throw FormatError("checkpoint array " + a.name + " lies outside the payload");
      }
      a.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        a.values[i] = std::bit_cast<float>(
            static_cast<std::uint32_t>(get_le(bytes, payload_begin + offset + i * sizeof(float), 4)));
      }
      expected_offset = offset + count * sizeof(float);
      ckpt.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor manifest: ") + e.what());
  }
  if (expected_offset != payload_size) throw FormatError("checkpoint payload has trailing bytes");

  meta.erase("tensors");
  meta.erase("format_version");
  if (meta.contains("config") && meta.contains("fingerprint") &&
      config_fingerprint(meta["config"]) != meta["fingerprint"].get<std::string>()) {
    throw FingerprintError("checkpoint fingerprint does not match its stored config");
  }
  ckpt.metadata = std::move(meta);
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace cdssl
