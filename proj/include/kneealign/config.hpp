#pragma once

// Flat "key = value" text files. '#' starts a comment; blank lines are
// ignored; keys are unique.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kneealign/error.hpp"

namespace ka {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw Error(Errc::ConfigError, origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      std::string key = trim(std::string_view(body).substr(0, eq));
      std::string value = trim(std::string_view(body).substr(eq + 1));
      if (key.empty()) throw Error(Errc::ConfigError, origin + ":" + std::to_string(lineno) + ": empty key");
      if (cfg.values_.contains(key)) {
        throw Error(Errc::ConfigError, origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
      cfg.order_.push_back(key);
      cfg.values_.emplace(std::move(key), std::move(value));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = value;
  }

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::vector<std::string>& keys() const { return order_; }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(Errc::ConfigError, "missing key '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return contains(key) ? raw(key) : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    return contains(key) ? parse_number<double>(key, raw(key)) : fallback;
  }

  long long get_int(const std::string& key, long long fallback) const {
    return contains(key) ? parse_number<long long>(key, raw(key)) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!contains(key)) return fallback;
    const std::string& v = raw(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw Error(Errc::ConfigError, "key '" + key + "': not a boolean: " + v);
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream in(raw(key));
    std::string tok;
    while (in >> tok) out.push_back(static_cast<int>(parse_number<long long>(key, tok)));
    return out;
  }

  /// Throws ConfigError naming the first key not in `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const {
    for (const auto& k : order_) {
      if (!allowed.contains(k)) throw Error(Errc::ConfigError, "unknown key '" + k + "'");
    }
  }

  std::string to_string() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  void save(const std::filesystem::path& path, const std::string& header = {}) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    if (!header.empty()) out << header;
    out << to_string();
  }

 private:
  template <class N>
  static N parse_number(const std::string& key, const std::string& text) {
    N v{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
      throw Error(Errc::ConfigError, "key '" + key + "': bad number '" + text + "'");
    }
    return v;
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace ka
