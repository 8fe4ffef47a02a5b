#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"

namespace cloakforge::cfg {

// Flat key=value configuration with INI-style sections. Keys are stored as
// "section.key"; every run writes its resolved configuration next to its
// outputs so it can be replayed from that file alone.
struct RunConfig {
  std::map<std::string, std::string> values;

  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
      };
      std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']' || t.size() < 3)
          throw ParseError("config line " + std::to_string(lineno) + ": bad section header");
        section = t.substr(1, t.size() - 2);
        continue;
      }
      size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty())
        throw ParseError("config line " + std::to_string(lineno) + ": empty key");
      cfg.values[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  std::string dump() const {
    std::string out;
    std::string section;
    for (const auto& [key, value] : values) {  // std::map: sorted, stable
      size_t dot = key.rfind('.');
      std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
      std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
      if (sec != section) {
        if (!out.empty()) out += "\n";
        out += "[" + sec + "]\n";
        section = sec;
      }
      out += name + " = " + value + "\n";
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config: " + path.string());
    out << dump();
  }

  bool has(const std::string& key) const { return values.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values[key] = value; }

  std::string get(const std::string& key, const std::string& def = "") const {
    auto it = values.find(key);
    return it == values.end() ? def : it->second;
  }

  double get_num(const std::string& key, double def) const {
    auto it = values.find(key);
    if (it == values.end()) return def;
    try {
      size_t consumed = 0;
      double v = std::stod(it->second, &consumed);
      if (consumed != it->second.size())
        throw ValidationError("config: bad number for " + key + ": '" + it->second + "'");
      return v;
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception&) {
      throw ValidationError("config: bad number for " + key + ": '" + it->second + "'");
    }
  }

  int get_int(const std::string& key, int def) const {
    return static_cast<int>(get_num(key, def));
  }

  uint64_t get_u64(const std::string& key, uint64_t def) const {
    auto it = values.find(key);
    if (it == values.end()) return def;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw ValidationError("config: bad integer for " + key + ": '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    auto it = values.find(key);
    if (it == values.end()) return def;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ValidationError("config: bad boolean for " + key + ": '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& def) const {
    auto it = values.find(key);
    if (it == values.end()) return def;
    std::vector<std::string> out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      size_t a = item.find_first_not_of(" \t");
      size_t b = item.find_last_not_of(" \t");
      if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    }
    return out;
  }

  // Unknown keys are rejected rather than silently ignored.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values)
      if (!known.count(key))
        throw ValidationError("config: unknown key '" + key + "'");
  }
};

}  // namespace cloakforge::cfg
