#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "segxfer/error.hpp"

namespace segxfer::harness {

/// Flat `key = value` settings with `#` comments. Dotted keys express
/// nesting (`unet.depth = 3`). Every lookup marks the key as used so typos
/// can be reported with check_all_used().
class Config {
 public:
  static Config parse(const std::string& text, const std::string& where = "config") {
    Config c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string at = where + ":" + std::to_string(lineno);
      if (eq == std::string::npos) fail("harness", "config_syntax", at + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) fail("harness", "config_syntax", at + ": empty key");
      if (c.values_.count(key)) fail("harness", "config_duplicate", at + ": duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("harness", "config_missing", "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) fail("harness", "config_missing_key", "missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!touch(key)) return fallback;
    const std::string v = get(key, "");
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      fail("harness", "config_value", key + ": '" + v + "' is not a number");
    }
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    if (!touch(key)) return fallback;
    return parse_uint(key, get(key, ""));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!touch(key)) return fallback;
    const std::string v = get(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("harness", "config_value", key + ": '" + v + "' is not a boolean");
  }

  /// Comma-separated list; empty entries are dropped.
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    if (!touch(key)) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(get(key, ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key,
                                           const std::vector<std::uint64_t>& fallback) const {
    if (!touch(key)) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key, {})) out.push_back(parse_uint(key, s));
    return out;
  }

  /// Fails on the first key that no lookup asked for.
  void check_all_used() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) fail("harness", "config_unknown_key", "unknown config key '" + k + "'");
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// `key = value` lines in key order, for echoing into outputs.
  std::vector<std::string> echo() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k + " = " + v);
    return out;
  }

 private:
  /// Marks `key` as used; true when it is present.
  bool touch(const std::string& key) const {
    used_.insert(key);
    return has(key);
  }

  static std::string trim(const std::string& s) {
    auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
    auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); });
    return b < e.base() ? std::string(b, e.base()) : std::string();
  }

  static std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      fail("harness", "config_value", key + ": '" + v + "' is not a non-negative integer");
    }
    return out;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace segxfer::harness
