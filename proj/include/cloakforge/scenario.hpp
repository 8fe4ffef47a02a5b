#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cloakforge/errors.hpp"

namespace cloakforge {

// Shooting conditions attached to an evaluation video. Brightness codes:
// A normal indoor, B outdoor sunshine, C backlight, D low light, E bright sun.
struct ScenarioMeta {
  std::string video_id;
  double duration_s = 0;
  double fps = 0;
  double angle_min = 0, angle_max = 0;  // degrees in [-180, 180]
  char brightness_code = 'A';
  double distance_min = 0, distance_max = 0;  // meters
  int persons = 0;
  std::string scenario_tag;

  void validate() const {
    if (fps <= 0) throw ValidationError("scenario meta: fps must be positive");
    if (angle_min < -180 || angle_max > 180 || angle_min > angle_max)
      throw ValidationError("scenario meta: bad angle range");
    if (brightness_code < 'A' || brightness_code > 'E')
      throw ValidationError("scenario meta: brightness code must be A..E");
  }

  bool operator==(const ScenarioMeta&) const = default;
};

inline double brightness_for_code(char code) {
  switch (code) {
    case 'A': return 0.85;
    case 'B': return 1.00;
    case 'C': return 0.70;
    case 'D': return 0.45;
    case 'E': return 1.12;
    default: throw ValidationError("unknown brightness code");
  }
}

inline void save_scenario_meta(const ScenarioMeta& meta, const std::filesystem::path& path) {
  meta.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scenario meta: " + path.string());
  out << "video_id = " << meta.video_id << "\n";
  out << "duration_s = " << meta.duration_s << "\n";
  out << "fps = " << meta.fps << "\n";
  out << "angle_min = " << meta.angle_min << "\n";
  out << "angle_max = " << meta.angle_max << "\n";
  out << "brightness_code = " << meta.brightness_code << "\n";
  out << "distance_min = " << meta.distance_min << "\n";
  out << "distance_max = " << meta.distance_max << "\n";
  out << "persons = " << meta.persons << "\n";
  out << "scenario_tag = " << meta.scenario_tag << "\n";
}

inline ScenarioMeta load_scenario_meta(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scenario meta: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto num = [&](const std::string& key, double def) {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ParseError("scenario meta: bad number for " + key);
    }
  };
  ScenarioMeta m;
  m.video_id = kv.count("video_id") ? kv["video_id"] : "";
  m.duration_s = num("duration_s", 0);
  m.fps = num("fps", 0);
  m.angle_min = num("angle_min", 0);
  m.angle_max = num("angle_max", 0);
  m.brightness_code = kv.count("brightness_code") && !kv["brightness_code"].empty()
                          ? kv["brightness_code"][0]
                          : 'A';
  m.distance_min = num("distance_min", 0);
  m.distance_max = num("distance_max", 0);
  m.persons = static_cast<int>(num("persons", 0));
  m.scenario_tag = kv.count("scenario_tag") ? kv["scenario_tag"] : "";
  m.validate();
  return m;
}

}  // namespace cloakforge
