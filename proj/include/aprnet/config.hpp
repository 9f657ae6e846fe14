#pragma once

// `key = value` configuration files. Blank lines and lines starting with '#'
// are ignored; later keys override earlier ones.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aprnet/tensor.hpp"

namespace aprnet {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is, const std::string& origin = "<config>") {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      const auto key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path.string());
    return parse(is, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return convert<double>(key, *v);
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return convert<std::size_t>(key, *v);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return convert<std::uint64_t>(key, *v);
  }

  /// Comma- or space-separated list of sizes.
  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::string s = *v;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream is(s);
    std::vector<std::size_t> out;
    std::string tok;
    while (is >> tok) out.push_back(convert<std::size_t>(key, tok));
    if (out.empty()) throw ConfigError("config key '" + key + "' has an empty list");
    return out;
  }

 private:
  template <class V>
  static V convert(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    V v{};
    if constexpr (std::is_unsigned_v<V>) {
      if (!text.empty() && text[0] == '-') {
        throw ConfigError("config key '" + key + "' must be non-negative, got '" + text + "'");
      }
    }
    if (!(is >> v) || !(is >> std::ws).eof()) {
      throw ConfigError("config key '" + key + "' has invalid value '" + text + "'");
    }
    return v;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace aprnet
