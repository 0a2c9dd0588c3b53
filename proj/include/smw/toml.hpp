#pragma once

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace smw {

// Minimal TOML subset for config files: [section] headers, scalar
// key = value pairs (numbers, booleans, quoted strings), '#' comments.
struct TomlValue {
  enum class Kind { number, boolean, string } kind = Kind::number;
  double number = 0.0;
  bool boolean = false;
  std::string string;
};

using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

namespace detail {

inline std::string toml_trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline TomlTable parse_toml(std::istream& in, const std::string& origin = "<toml>") {
  TomlTable table;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::toml_trim(line);
    if (line.empty()) continue;
    const auto err = [&](const std::string& msg) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (line.front() == '[') {
      if (line.back() != ']') err("unterminated section header");
      section = detail::toml_trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) err("expected key = value");
    const std::string key = detail::toml_trim(line.substr(0, eq));
    const std::string raw = detail::toml_trim(line.substr(eq + 1));
    if (key.empty() || raw.empty()) err("empty key or value");

    TomlValue v;
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"') err("unterminated string");
      v.kind = TomlValue::Kind::string;
      v.string = raw.substr(1, raw.size() - 2);
    } else if (raw == "true" || raw == "false") {
      v.kind = TomlValue::Kind::boolean;
      v.boolean = raw == "true";
    } else {
      try {
        std::size_t used = 0;
        v.number = std::stod(raw, &used);
        if (used != raw.size()) err("trailing characters after number");
      } catch (const std::invalid_argument&) {
        err("cannot parse value: " + raw);
      }
    }
    table[section][key] = std::move(v);
  }
  return table;
}

inline TomlTable parse_toml_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return parse_toml(f, path);
}

inline double toml_number(const TomlTable& t, const std::string& section,
                          const std::string& key, double fallback) {
  const auto s = t.find(section);
  if (s == t.end()) return fallback;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return fallback;
  if (k->second.kind != TomlValue::Kind::number)
    throw std::runtime_error("config key " + section + "." + key + " must be a number");
  return k->second.number;
}

}  // namespace smw
