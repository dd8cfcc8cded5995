#include "cdssl/toml_lite.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "cdssl/errors.hpp"

namespace cdssl {

namespace {

class LineParser {
 public:
  LineParser(std::string_view text, std::string prefix) : s_(text), prefix_(std::move(prefix)) {}

  [[noreturn]] void fail(const std::string& what) const { throw ValidationError(prefix_ + what); }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < s_.size() && s_[pos_] == c;
  }

  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string key() {
    skip_ws();
    if (peek('"')) return quoted();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-'))
      ++pos_;
    if (start == pos_) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::vector<std::string> dotted_key() {
    std::vector<std::string> parts{key()};
    while (peek('.')) {
      ++pos_;
      parts.push_back(key());
    }
    return parts;
  }

  nlohmann::json value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return quoted();
    if (c == '[') return array();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return number();
  }

 private:
  std::string quoted() {
    expect('"');
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  nlohmann::json array() {
    expect('[');
    nlohmann::json out = nlohmann::json::array();
    if (peek(']')) {
      ++pos_;
      return out;
    }
    while (true) {
      out.push_back(value());
      if (peek(',')) {
        ++pos_;
        if (peek(']')) {
          ++pos_;
          return out;
        }
        continue;
      }
      expect(']');
      return out;
    }
  }

  nlohmann::json number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '+' ||
                                s_[pos_] == '-' || s_[pos_] == '.' || s_[pos_] == '_'))
      ++pos_;
    std::string tok;
    for (char c : s_.substr(start, pos_ - start))
      if (c != '_') tok.push_back(c);
    if (tok.empty()) fail("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos && tok.rfind("0x", 0) != 0;
    if (!is_float) {
      long long v = 0;
      const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(b, tok.data() + tok.size(), v);
      if (ec == std::errc() && p == tok.data() + tok.size()) return v;
    } else {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used == tok.size()) return v;
      } catch (const std::exception&) {
      }
    }
    fail("invalid value '" + tok + "'");
  }

  std::string_view s_;
  std::string prefix_;
  std::size_t pos_ = 0;
};

nlohmann::json& table_at(nlohmann::json& root, const std::vector<std::string>& path, const LineParser& p) {
  nlohmann::json* node = &root;
  for (const auto& part : path) {
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    if (!node->is_object()) p.fail("'" + part + "' is already a value, not a table");
  }
  return *node;
}

}  // namespace

nlohmann::json parse_toml(std::string_view text, std::string_view origin) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* current = &root;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    LineParser p(line, std::string(origin) + ":" + std::to_string(line_no) + ": ");
    if (!p.at_end_or_comment()) {
      if (p.peek('[')) {
        p.expect('[');
        const auto path = p.dotted_key();
        p.expect(']');
        if (!p.at_end_or_comment()) p.fail("unexpected text after table header");
        current = &table_at(root, path, p);
      } else {
        auto path = p.dotted_key();
        p.expect('=');
        nlohmann::json v = p.value();
        if (!p.at_end_or_comment()) p.fail("unexpected text after value");
        const std::string leaf = path.back();
        path.pop_back();
        nlohmann::json& table = path.empty() ? *current : table_at(*current, path, p);
        if (table.contains(leaf)) p.fail("duplicate key '" + leaf + "'");
        table[leaf] = std::move(v);
      }
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  return root;
}

nlohmann::json load_toml(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str(), path.string());
}

}  // namespace cdssl
