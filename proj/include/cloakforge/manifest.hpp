#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"

namespace cloakforge {

// image_id of a file path is its stem: "frames/img_0042.png" -> "img_0042".
inline std::string image_id_from_path(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

struct ManifestEntry {
  std::string image_path;
  std::string annotation_path;
  std::string split;      // "train" or "test"
  bool poisoned = false;  // in-memory only, loaded from the poison_log sidecar

  std::string image_id() const { return image_id_from_path(image_path); }

  bool operator==(const ManifestEntry&) const = default;
};

// Line-oriented dataset index: `image_path<TAB>annotation_path<TAB>split`.
// Paths may be relative; they resolve against `root`, which load() sets to
// the manifest's parent directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;

  std::filesystem::path resolve(const std::string& path) const {
    std::filesystem::path p(path);
    return p.is_absolute() || root.empty() ? p : root / p;
  }

  std::vector<ManifestEntry> split_entries(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e);
    return out;
  }

  static DatasetManifest parse(const std::string& text) {
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      size_t t1 = line.find('\t');
      size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
      if (t2 == std::string::npos)
        throw ParseError("manifest line " + std::to_string(lineno) +
                         ": expected image<TAB>annotation<TAB>split");
      ManifestEntry e;
      e.image_path = line.substr(0, t1);
      e.annotation_path = line.substr(t1 + 1, t2 - t1 - 1);
      e.split = line.substr(t2 + 1);
      if (e.split != "train" && e.split != "test")
        throw ParseError("manifest line " + std::to_string(lineno) + ": bad split '" +
                         e.split + "'");
      m.entries.push_back(std::move(e));
    }
    return m;
  }

  std::string dump() const {
    std::string out;
    for (const auto& e : entries) {
      out += e.image_path;
      out += '\t';
      out += e.annotation_path;
      out += '\t';
      out += e.split;
      out += '\n';
    }
    return out;
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    DatasetManifest m = parse(ss.str());
    m.root = path.parent_path();
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << dump();
  }
};

// Sidecar listing the image_ids of poisoned entries, one per line. Kept out
// of the manifest itself so the 3-field file stays loadable by tooling that
// has no notion of poisoning.
inline void save_poison_log(const std::filesystem::path& path,
                            const std::vector<std::string>& image_ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write poison log: " + path.string());
  for (const auto& id : image_ids) out << id << '\n';
}

inline std::set<std::string> load_poison_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open poison log: " + path.string());
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.insert(line);
  }
  return ids;
}

inline void apply_poison_log(DatasetManifest& manifest, const std::set<std::string>& ids) {
  for (auto& e : manifest.entries) e.poisoned = ids.count(e.image_id()) > 0;
}

}  // namespace cloakforge
