#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "safl/errors.hpp"

namespace safl {

// Flat key-value configuration with [section] headers. Grammar (see also
// docs/config.md):
//   file     := { line }
//   line     := section | entry | comment | blank
//   section  := '[' name ']'
//   entry    := key '=' value        (whitespace around tokens is trimmed)
//   comment  := ('#' | ';') text
//   value    := scalar | list
//   list     := scalar { ',' scalar }
//   int list := also supports 'lo..hi' inclusive ranges, e.g. seeds = 0..19
class Config {
 public:
  using Section = std::map<std::string, std::string>;

  static Config parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
  }

  static Config parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string trimmed = trim(strip_comment(line));
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']' || trimmed.size() < 3) {
          throw config_error("config line " + std::to_string(lineno) + ": malformed section header");
        }
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        cfg.sections_[section];  // a section may legitimately stay empty
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) {
        throw config_error("config line " + std::to_string(lineno) + ": empty key");
      }
      if (section.empty()) {
        throw config_error("config line " + std::to_string(lineno) + ": entry before any [section]");
      }
      cfg.sections_[section][key] = value;
    }
    return cfg;
  }

  // Overrides use the form section.key=value.
  void apply_override(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw config_error("override must be section.key=value: " + spec);
    const std::string path = trim(spec.substr(0, eq));
    const std::string value = trim(spec.substr(eq + 1));
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 >= path.size()) {
      throw config_error("override must be section.key=value: " + spec);
    }
    sections_[path.substr(0, dot)][path.substr(dot + 1)] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end() || s->second.count(key) == 0) {
      throw config_error("missing config key " + section + "." + key);
    }
    return s->second.at(key);
  }

  std::string get_string_or(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    return has(section, key) ? get_string(section, key) : fallback;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return parse_double(get_string(section, key), section + "." + key);
  }
  double get_double_or(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
  }

  long long get_int(const std::string& section, const std::string& key) const {
    return parse_int(get_string(section, key), section + "." + key);
  }
  long long get_int_or(const std::string& section, const std::string& key, long long fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
  }

  bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_string(section, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error("bad boolean for " + section + "." + key + ": " + v);
  }

  std::vector<double> get_double_list(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split_list(get_string(section, key))) {
      out.push_back(parse_double(tok, section + "." + key));
    }
    if (out.empty()) throw config_error("empty list for " + section + "." + key);
    return out;
  }

  std::vector<long long> get_int_list(const std::string& section, const std::string& key) const {
    std::vector<long long> out;
    for (const auto& tok : split_list(get_string(section, key))) {
      const auto dots = tok.find("..");
      if (dots != std::string::npos) {
        const long long lo = parse_int(trim(tok.substr(0, dots)), section + "." + key);
        const long long hi = parse_int(trim(tok.substr(dots + 2)), section + "." + key);
        if (hi < lo) throw config_error("descending range for " + section + "." + key + ": " + tok);
        for (long long v = lo; v <= hi; ++v) out.push_back(v);
      } else {
        out.push_back(parse_int(tok, section + "." + key));
      }
    }
    if (out.empty()) throw config_error("empty list for " + section + "." + key);
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& section, const std::string& key) const {
    auto out = split_list(get_string(section, key));
    if (out.empty()) throw config_error("empty list for " + section + "." + key);
    return out;
  }

  const std::map<std::string, Section>& sections() const { return sections_; }

  // Canonical form: sections and keys in sorted order, one entry per line.
  std::string canonical() const {
    std::string out;
    for (const auto& [name, entries] : sections_) {
      out += "[" + name + "]\n";
      for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    }
    return out;
  }

  // FNV-1a 64-bit over the canonical serialization; recorded in every output
  // manifest so a sweep cell is identified by (hash, seed).
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : canonical()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::string hash_hex() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }

 private:
  static std::string strip_comment(const std::string& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '#' || line[i] == ';') return line.substr(0, i);
    }
    return line;
  }

  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    for (const auto& tok : out) {
      if (tok.empty()) throw config_error("empty list element in: " + s);
    }
    return out;
  }

  static double parse_double(const std::string& s, const std::string& where) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw config_error("bad number for " + where + ": '" + s + "'");
    }
  }

  static long long parse_int(const std::string& s, const std::string& where) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw config_error("bad integer for " + where + ": '" + s + "'");
    }
  }

  std::map<std::string, Section> sections_;
};

}  // namespace safl
