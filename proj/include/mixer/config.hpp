#pragma once

// Flat `key = value` config files. Unknown keys are errors so schedule-name
// typos fail loudly instead of silently using defaults.

#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace mixer {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Config = std::map<std::string, std::string>;

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  Config cfg;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(lineno));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at " + path + ":" + std::to_string(lineno));
    if (!cfg.emplace(key, value).second)
      throw ConfigError("config: duplicate key '" + key + "' at " + path + ":" + std::to_string(lineno));
  }
  return cfg;
}

inline void require_known_keys(const Config& cfg, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : cfg)
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_str(const Config& cfg, const std::string& key, const std::string& fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : it->second;
}

inline bool has_key(const Config& cfg, const std::string& key) { return cfg.count(key) != 0; }

inline long get_int(const Config& cfg, const std::string& key, long fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    std::size_t used = 0;
    const long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' wants an integer, got '" + it->second + "'");
  }
}

inline double get_double(const Config& cfg, const std::string& key, double fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' wants a number, got '" + it->second + "'");
  }
}

}  // namespace mixer
