#pragma once

#include <filesystem>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cdssl {

/// Parses the TOML subset used by experiment configs into nested JSON:
/// `[a.b]` tables, `key = value` pairs, `#` comments, and values that are
/// basic strings, integers, floats, booleans or single-line arrays of those.
/// Errors are ValidationError with "<origin>:<line>: " prefixes.
nlohmann::json parse_toml(std::string_view text, std::string_view origin = "<config>");
nlohmann::json load_toml(const std::filesystem::path& path);

}  // namespace cdssl
