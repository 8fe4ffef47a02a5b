#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "cloakforge/errors.hpp"
#include "cloakforge/manifest.hpp"
#include "cloakforge/types.hpp"

namespace cloakforge::voc {

struct ParseOptions {
  // When non-empty, objects whose class is not listed raise ValidationError.
  std::vector<std::string> class_whitelist;
  // Non-fatal findings (e.g. boxes clipped to the image bounds) land here.
  std::vector<std::string>* warnings = nullptr;
};

namespace detail {

inline double parse_number(const std::string& text, const std::string& where) {
  const char* s = text.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  while (end && *end == ' ') ++end;
  if (end == s || (end && *end != '\0'))
    throw ValidationError(where + ": bad number '" + text + "'");
  if (!std::isfinite(v)) throw ValidationError(where + ": non-finite number");
  return v;
}

inline bool parse_bool01(const std::string& text, const std::string& where) {
  std::string t = text;
  t.erase(std::remove(t.begin(), t.end(), ' '), t.end());
  if (t == "1") return true;
  if (t == "0" || t.empty()) return false;
  throw ValidationError(where + ": expected 0 or 1, got '" + text + "'");
}

// Emits integers without a decimal point so integral inputs round-trip
// byte-for-byte with common VOC files; everything else keeps full precision.
inline std::string format_coord(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Parses one VOC XML annotation document. Objects keep document order;
// missing <difficult> and <trigger> default to false; boxes that overrun the
// image are clipped with a warning rather than rejected.
inline FrameAnnotation parse_voc(const std::string& xml_text, const ParseOptions& opts = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(xml_text);
    pt::read_xml(in, tree);
  } catch (const std::exception& e) {
    throw ParseError(std::string("malformed XML: ") + e.what());
  }

  auto root = tree.get_child_optional("annotation");
  if (!root) throw ParseError("missing <annotation> root element");

  FrameAnnotation frame;
  try {
    frame.image_id =
        std::filesystem::path(root->get<std::string>("filename", "")).stem().string();
    auto size = root->get_child_optional("size");
    if (!size) throw ParseError("missing <size> element");
    frame.width = static_cast<int>(
        detail::parse_number(size->get<std::string>("width", ""), "size/width"));
    frame.height = static_cast<int>(
        detail::parse_number(size->get<std::string>("height", ""), "size/height"));
    frame.depth = static_cast<int>(
        detail::parse_number(size->get<std::string>("depth", "3"), "size/depth"));
  } catch (const pt::ptree_error& e) {
    throw ParseError(std::string("bad annotation structure: ") + e.what());
  }
  if (frame.width <= 0 || frame.height <= 0 || frame.depth <= 0)
    throw ValidationError("non-positive image size");

  size_t index = 0;
  for (const auto& [key, node] : *root) {
    if (key != "object") continue;
    const std::string where = "object " + std::to_string(index);
    ObjectAnnotation obj;
    obj.class_name = node.get<std::string>("name", "");
    if (obj.class_name.empty()) throw ValidationError(where + ": missing <name>");
    if (!opts.class_whitelist.empty() &&
        std::find(opts.class_whitelist.begin(), opts.class_whitelist.end(), obj.class_name) ==
            opts.class_whitelist.end())
      throw ValidationError(where + ": unknown class '" + obj.class_name + "'");

    auto box = node.get_child_optional("bndbox");
    if (!box) throw ValidationError(where + ": missing <bndbox>");
    obj.bbox.xmin = detail::parse_number(box->get<std::string>("xmin", ""), where + "/xmin");
    obj.bbox.ymin = detail::parse_number(box->get<std::string>("ymin", ""), where + "/ymin");
    obj.bbox.xmax = detail::parse_number(box->get<std::string>("xmax", ""), where + "/xmax");
    obj.bbox.ymax = detail::parse_number(box->get<std::string>("ymax", ""), where + "/ymax");
    obj.difficult = detail::parse_bool01(node.get<std::string>("difficult", "0"),
                                         where + "/difficult");
    obj.is_trigger =
        detail::parse_bool01(node.get<std::string>("trigger", "0"), where + "/trigger");

    if (!(obj.bbox.xmin < obj.bbox.xmax))
      throw ValidationError(where + ": xmin >= xmax");
    if (!(obj.bbox.ymin < obj.bbox.ymax))
      throw ValidationError(where + ": ymin >= ymax");
    // Real VOC files contain off-by-one overruns; clip instead of rejecting.
    BBox clipped = obj.bbox.clipped(frame.width, frame.height);
    if (clipped != obj.bbox) {
      if (opts.warnings)
        opts.warnings->push_back(where + ": box clipped to image bounds");
      obj.bbox = clipped;
      if (!(obj.bbox.xmin < obj.bbox.xmax) || !(obj.bbox.ymin < obj.bbox.ymax))
        throw ValidationError(where + ": box lies outside the image");
    }
    if (obj.is_trigger && obj.class_name != kTriggerClass)
      throw ValidationError(where + ": trigger flag on class '" + obj.class_name + "'");

    frame.objects.push_back(std::move(obj));
    ++index;
  }
  return frame;
}

// Serializes a frame to VOC XML. The trigger flag rides in a nonstandard
// <trigger> child that stock VOC readers ignore.
inline std::string write_voc(const FrameAnnotation& frame) {
  frame.validate();
  std::string out;
  out += "<annotation>\n";
  out += "  <filename>" + detail::xml_escape(frame.image_id) + ".png</filename>\n";
  out += "  <size>\n";
  out += "    <width>" + std::to_string(frame.width) + "</width>\n";
  out += "    <height>" + std::to_string(frame.height) + "</height>\n";
  out += "    <depth>" + std::to_string(frame.depth) + "</depth>\n";
  out += "  </size>\n";
  for (const auto& obj : frame.objects) {
    out += "  <object>\n";
    out += "    <name>" + detail::xml_escape(obj.class_name) + "</name>\n";
    out += "    <difficult>" + std::string(obj.difficult ? "1" : "0") + "</difficult>\n";
    if (obj.is_trigger) out += "    <trigger>1</trigger>\n";
    out += "    <bndbox>\n";
    out += "      <xmin>" + detail::format_coord(obj.bbox.xmin) + "</xmin>\n";
    out += "      <ymin>" + detail::format_coord(obj.bbox.ymin) + "</ymin>\n";
    out += "      <xmax>" + detail::format_coord(obj.bbox.xmax) + "</xmax>\n";
    out += "      <ymax>" + detail::format_coord(obj.bbox.ymax) + "</ymax>\n";
    out += "    </bndbox>\n";
    out += "  </object>\n";
  }
  out += "</annotation>\n";
  return out;
}

inline FrameAnnotation load_annotation(const std::filesystem::path& path,
                                       const ParseOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open annotation: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_voc(ss.str(), opts);
}

inline void save_annotation(const FrameAnnotation& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write annotation: " + path.string());
  out << write_voc(frame);
}

struct FileFinding {
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<FileFinding> errors;
  std::vector<std::string> duplicate_ids;
  std::map<std::string, int> class_histogram;
  int total_frames = 0;
  int trigger_frames = 0;

  double trigger_fraction() const {
    return total_frames == 0 ? 0.0 : static_cast<double>(trigger_frames) / total_frames;
  }

  bool ok() const { return errors.empty() && duplicate_ids.empty(); }

  std::string summary() const {
    std::ostringstream ss;
    ss << total_frames << " frames, " << trigger_frames << " with triggers (fraction "
       << trigger_fraction() << "), " << errors.size() << " file errors, "
       << duplicate_ids.size() << " duplicate ids\n";
    for (const auto& [cls, n] : class_histogram) ss << "  " << cls << ": " << n << "\n";
    for (const auto& e : errors) ss << "  ERROR " << e.path << ": " << e.message << "\n";
    for (const auto& d : duplicate_ids) ss << "  DUPLICATE id " << d << "\n";
    return ss.str();
  }
};

// Walks every annotation referenced by the manifest. Unreadable or invalid
// files become report entries, never thrown failures.
inline ValidationReport validate_dataset(const DatasetManifest& manifest,
                                         const ParseOptions& opts = {},
                                         bool check_images_exist = false) {
  ValidationReport report;
  std::set<std::string> seen_ids;
  std::set<std::string> reported_dups;
  for (const auto& entry : manifest.entries) {
    ++report.total_frames;
    const std::string id = entry.image_id();
    if (!seen_ids.insert(id).second && reported_dups.insert(id).second)
      report.duplicate_ids.push_back(id);
    if (check_images_exist && !std::filesystem::exists(manifest.resolve(entry.image_path)))
      report.errors.push_back({entry.image_path, "image file missing"});
    try {
      FrameAnnotation frame = load_annotation(manifest.resolve(entry.annotation_path), opts);
      for (const auto& o : frame.objects) ++report.class_histogram[o.class_name];
      if (frame.has_trigger()) ++report.trigger_frames;
    } catch (const Error& e) {
      report.errors.push_back({entry.annotation_path, e.what()});
    }
  }
  return report;
}

}  // namespace cloakforge::voc
