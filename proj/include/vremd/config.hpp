#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

namespace vremd {

// Plain `key = value` configuration text with '#' comments.
inline std::map<std::string, std::string> parse_config_text(
    const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value, got \"" + line +
                                  "\"");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": empty key");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Tracks which keys were consumed so leftovers can be rejected by name.
class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, std::string> values)
      : values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw std::invalid_argument("config key \"" + key +
                                  "\": not a number: " + it->second);
    }
  }

  long get_long(const std::string& key, long fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      return std::stol(it->second);
    } catch (const std::exception&) {
      throw std::invalid_argument("config key \"" + key +
                                  "\": not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::invalid_argument("config key \"" + key +
                                "\": expected true/false, got " + it->second);
  }

  // Throws if any key was never consumed, naming the first offender.
  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key))
        throw std::invalid_argument("unknown config key: " + key);
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace vremd
