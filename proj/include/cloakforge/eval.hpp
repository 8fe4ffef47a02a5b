#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloakforge/detector.hpp"
#include "cloakforge/errors.hpp"
#include "cloakforge/manifest.hpp"
#include "cloakforge/metrics.hpp"
#include "cloakforge/scenario.hpp"
#include "cloakforge/voc.hpp"

namespace cloakforge::eval {

struct VideoEvalResult {
  ScenarioMeta meta;
  std::vector<metrics::FrameVerdict> verdicts;
  double asr = 0;
  bool not_applicable = false;  // no frame showed a trigger; asr is suppressed
};

// Observer for per-frame inference results (detection logging, rendering).
using FrameObserver = std::function<void(const std::string& frame_id, const Image& image,
                                         const FrameAnnotation& truth,
                                         const std::vector<metrics::Detection>& dets)>;

// Runs the detector over a directory of frame PNGs with per-frame VOC truth
// and a scenario.meta file. Frames without any trigger ground truth produce
// no verdict; a video whose frames are all trigger-free comes back
// not_applicable. A frame is cloaked only when every trigger person in it
// stays below the IoU threshold.
inline VideoEvalResult evaluate_video(const det::DetectorModel& model,
                                      const std::filesystem::path& video_dir,
                                      double score_threshold = 0.5,
                                      double nms_threshold = 0.45,
                                      const FrameObserver& observer = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(video_dir))
    throw IoError("video directory not found: " + video_dir.string());

  std::vector<fs::path> frames;
  int xml_count = 0;
  for (const auto& entry : fs::directory_iterator(video_dir)) {
    if (entry.path().extension() == ".png") frames.push_back(entry.path());
    if (entry.path().extension() == ".xml") ++xml_count;
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) throw AlignmentError("video has no frames: " + video_dir.string());
  if (static_cast<int>(frames.size()) != xml_count)
    throw AlignmentError("video " + video_dir.string() + ": " +
                         std::to_string(frames.size()) + " frames vs " +
                         std::to_string(xml_count) + " annotations");

  VideoEvalResult result;
  result.meta = load_scenario_meta(video_dir / "scenario.meta");

  for (const auto& frame_path : frames) {
    fs::path ann_path = frame_path;
    ann_path.replace_extension(".xml");
    if (!fs::exists(ann_path))
      throw AlignmentError("missing annotation for frame " + frame_path.string());
    FrameAnnotation ann = voc::load_annotation(ann_path);
    std::vector<BBox> triggers = ann.trigger_boxes();
    if (triggers.empty()) continue;

    Image img = read_png(frame_path);
    auto dets = det::infer_frame(model, img, score_threshold, nms_threshold);
    if (observer) observer(ann.image_id, img, ann, dets);
    // worst-hidden trigger decides the frame
    double frame_best = 0;
    BBox frame_box = triggers.front();
    for (const auto& tb : triggers) {
      double best = 0;
      for (const auto& d : dets) {
        if (d.class_name != kTriggerClass) continue;
        best = std::max(best, metrics::iou(tb, d.bbox));
      }
      if (best >= frame_best) {
        frame_best = best;
        frame_box = tb;
      }
    }
    result.verdicts.push_back(
        metrics::make_frame_verdict(ann.image_id, frame_box, frame_best));
  }

  if (result.verdicts.empty()) {
    result.not_applicable = true;
    result.asr = 0;
  } else {
    result.asr = metrics::asr(result.verdicts);
  }
  return result;
}

struct MapEvalResult {
  double map = 0;
  std::vector<metrics::APResult> per_class;
};

// Clean-data accuracy: VOC-style mAP over a manifest split. Classes with no
// ground truth in the split are left out of the mean.
inline MapEvalResult evaluate_map(const det::DetectorModel& model,
                                  const DatasetManifest& manifest,
                                  const std::string& split = "test",
                                  double score_threshold = 0.05, double nms_threshold = 0.45,
                                  double iou_threshold = 0.5,
                                  metrics::APInterpolation interp =
                                      metrics::APInterpolation::AllPoint) {
  std::map<std::string, metrics::ApAccumulator> acc;
  for (const auto& cls : model.classes) acc[cls].class_name = cls;

  int frames = 0;
  for (const auto& entry : manifest.entries) {
    if (entry.split != split) continue;
    ++frames;
    FrameAnnotation ann = voc::load_annotation(manifest.resolve(entry.annotation_path));
    Image img = read_png(manifest.resolve(entry.image_path));
    auto dets = det::infer_frame(model, img, score_threshold, nms_threshold);
    for (const auto& cls : model.classes) {
      std::vector<metrics::Detection> class_dets;
      for (const auto& d : dets)
        if (d.class_name == cls) class_dets.push_back(d);
      std::vector<BBox> gts;
      std::vector<bool> difficult;
      for (const auto& o : ann.objects)
        if (o.class_name == cls) {
          gts.push_back(o.bbox);
          difficult.push_back(o.difficult);
        }
      acc[cls].add_frame(class_dets, gts, difficult, iou_threshold);
    }
  }
  if (frames == 0) throw EmptyDatasetError("evaluate_map: no '" + split + "' entries");

  MapEvalResult result;
  std::vector<metrics::APResult> with_gt;
  for (const auto& cls : model.classes) {
    metrics::APResult ap = acc[cls].result(interp);
    result.per_class.push_back(ap);
    if (acc[cls].num_gt > 0) with_gt.push_back(ap);
  }
  result.map = metrics::mean_ap(with_gt);
  return result;
}

inline void save_map_csv(const MapEvalResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write map csv: " + path.string());
  out << "class,ap\n";
  char buf[128];
  for (const auto& ap : r.per_class) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f\n", ap.class_name.c_str(), ap.ap);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "mAP,%.6f\n", r.map);
  out << buf;
}

inline MapEvalResult load_map_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open map csv: " + path.string());
  MapEvalResult r;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    size_t comma = line.rfind(',');
    if (comma == std::string::npos) throw ParseError("map csv: bad row '" + line + "'");
    std::string name = line.substr(0, comma);
    double v = std::stod(line.substr(comma + 1));
    if (name == "mAP")
      r.map = v;
    else
      r.per_class.push_back({name, v, {}});
  }
  return r;
}

// JSON snapshot of one video evaluation, the unit the report command consumes.
inline void save_video_result(const VideoEvalResult& r, const std::filesystem::path& path) {
  nlohmann::json j;
  j["video_id"] = r.meta.video_id;
  j["duration_s"] = r.meta.duration_s;
  j["fps"] = r.meta.fps;
  j["angle_min"] = r.meta.angle_min;
  j["angle_max"] = r.meta.angle_max;
  j["brightness_code"] = std::string(1, r.meta.brightness_code);
  j["distance_min"] = r.meta.distance_min;
  j["distance_max"] = r.meta.distance_max;
  j["persons"] = r.meta.persons;
  j["scenario_tag"] = r.meta.scenario_tag;
  j["asr"] = r.asr;
  j["not_applicable"] = r.not_applicable;
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& v : r.verdicts)
    verdicts.push_back({{"frame_id", v.frame_id},
                        {"best_iou", v.best_iou},
                        {"cloaked", v.cloaked},
                        {"box", {v.trigger_gt.xmin, v.trigger_gt.ymin, v.trigger_gt.xmax,
                                 v.trigger_gt.ymax}}});
  j["verdicts"] = verdicts;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write video result: " + path.string());
  out << j.dump(2) << '\n';
}

inline VideoEvalResult load_video_result(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open video result: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    VideoEvalResult r;
    r.meta.video_id = j.at("video_id").get<std::string>();
    r.meta.duration_s = j.at("duration_s").get<double>();
    r.meta.fps = j.at("fps").get<double>();
    r.meta.angle_min = j.at("angle_min").get<double>();
    r.meta.angle_max = j.at("angle_max").get<double>();
    r.meta.brightness_code = j.at("brightness_code").get<std::string>().at(0);
    r.meta.distance_min = j.at("distance_min").get<double>();
    r.meta.distance_max = j.at("distance_max").get<double>();
    r.meta.persons = j.at("persons").get<int>();
    r.meta.scenario_tag = j.at("scenario_tag").get<std::string>();
    r.asr = j.at("asr").get<double>();
    r.not_applicable = j.at("not_applicable").get<bool>();
    for (const auto& v : j.at("verdicts")) {
      metrics::FrameVerdict fv;
      fv.frame_id = v.at("frame_id").get<std::string>();
      fv.best_iou = v.at("best_iou").get<double>();
      fv.cloaked = v.at("cloaked").get<bool>();
      auto box = v.at("box");
      fv.trigger_gt = BBox{box.at(0).get<double>(), box.at(1).get<double>(),
                           box.at(2).get<double>(), box.at(3).get<double>()};
      r.verdicts.push_back(fv);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("video result " + path.string() + ": " + e.what());
  }
}

struct ScenarioRow {
  std::string video_id;
  double duration_s = 0;
  double angle_min = 0, angle_max = 0;
  char brightness_code = 'A';
  double distance_min = 0, distance_max = 0;
  int persons = 0;
  double asr = 0;
  bool not_applicable = false;
};

struct ReportDocument {
  // scenario tag -> rows, in first-appearance order
  std::vector<std::pair<std::string, std::vector<ScenarioRow>>> scenarios;
  std::vector<std::pair<std::string, double>> scenario_averages;  // N/A rows excluded
  double overall_average = 0;
  int overall_count = 0;
  double cda_clean = 0, cda_backdoored = 0;
  std::vector<std::tuple<std::string, double, double>> per_class_cda;

  std::string to_csv() const {
    std::ostringstream ss;
    char buf[256];
    ss << "scenario,video_id,duration_s,angle,brightness,distance,persons,asr\n";
    for (const auto& [tag, rows] : scenarios) {
      for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.2f,%g..%g,%c,%g..%g,%d,", tag.c_str(),
                      r.video_id.c_str(), r.duration_s, r.angle_min, r.angle_max,
                      r.brightness_code, r.distance_min, r.distance_max, r.persons);
        ss << buf;
        if (r.not_applicable)
          ss << "N/A\n";
        else {
          std::snprintf(buf, sizeof(buf), "%.2f\n", r.asr);
          ss << buf;
        }
      }
      for (const auto& [atag, avg] : scenario_averages)
        if (atag == tag) {
          std::snprintf(buf, sizeof(buf), "%s,average,,,,,,%.2f\n", tag.c_str(), avg);
          ss << buf;
        }
    }
    std::snprintf(buf, sizeof(buf), "all,average,,,,,,%.2f\n", overall_average);
    ss << buf;
    ss << "\nclass,cda_clean,cda_backdoored,delta\n";
    for (const auto& [cls, c, b] : per_class_cda) {
      std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%+.4f\n", cls.c_str(), c, b, b - c);
      ss << buf;
    }
    std::snprintf(buf, sizeof(buf), "mAP,%.4f,%.4f,%+.4f\n", cda_clean, cda_backdoored,
                  cda_backdoored - cda_clean);
    ss << buf;
    return ss.str();
  }

  std::string to_markdown() const {
    std::ostringstream ss;
    char buf[256];
    ss << "# Evaluation report\n\n## Cloaking ASR by scenario\n\n";
    ss << "| Scenario | Video | Time (s) | Angle | Brightness | Distance | Persons | ASR (%) |\n";
    ss << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& [tag, rows] : scenarios) {
      for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "| %s | %s | %.1f | %g..%g | %c | %g..%g | %d | ",
                      tag.c_str(), r.video_id.c_str(), r.duration_s, r.angle_min, r.angle_max,
                      r.brightness_code, r.distance_min, r.distance_max, r.persons);
        ss << buf;
        if (r.not_applicable)
          ss << "N/A |\n";
        else {
          std::snprintf(buf, sizeof(buf), "%.2f |\n", r.asr);
          ss << buf;
        }
      }
      for (const auto& [atag, avg] : scenario_averages)
        if (atag == tag) {
          std::snprintf(buf, sizeof(buf), "| %s | *average* | | | | | | %.2f |\n", tag.c_str(),
                        avg);
          ss << buf;
        }
    }
    std::snprintf(buf, sizeof(buf), "| *all* | *average* | | | | | | %.2f |\n\n",
                  overall_average);
    ss << buf;
    ss << "## Clean data accuracy (mAP@0.5)\n\n| Class | Clean | Backdoored | Delta |\n|---|---|---|---|\n";
    for (const auto& [cls, c, b] : per_class_cda) {
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f | %+.4f |\n", cls.c_str(), c, b,
                    b - c);
      ss << buf;
    }
    std::snprintf(buf, sizeof(buf), "| **mAP** | %.4f | %.4f | %+.4f |\n", cda_clean,
                  cda_backdoored, cda_backdoored - cda_clean);
    ss << buf;
    return ss.str();
  }
};

// Collates per-video ASR into scenario tables plus the clean-vs-backdoored
// accuracy comparison. N/A videos appear as rows but never enter averages.
inline ReportDocument aggregate_report(const std::vector<VideoEvalResult>& results,
                                       const MapEvalResult& cda_clean_model,
                                       const MapEvalResult& cda_backdoored_model) {
  if (results.empty()) throw EmptyInputError("aggregate_report: no video results");
  ReportDocument doc;
  for (const auto& r : results) {
    ScenarioRow row{r.meta.video_id,    r.meta.duration_s,   r.meta.angle_min,
                    r.meta.angle_max,   r.meta.brightness_code, r.meta.distance_min,
                    r.meta.distance_max, r.meta.persons,      r.asr,
                    r.not_applicable};
    auto it = std::find_if(doc.scenarios.begin(), doc.scenarios.end(),
                           [&](const auto& p) { return p.first == r.meta.scenario_tag; });
    if (it == doc.scenarios.end()) {
      doc.scenarios.push_back({r.meta.scenario_tag, {row}});
    } else {
      it->second.push_back(row);
    }
  }
  double overall_sum = 0;
  int overall_n = 0;
  for (const auto& [tag, rows] : doc.scenarios) {
    double sum = 0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.not_applicable) continue;
      sum += r.asr;
      ++n;
    }
    if (n > 0) doc.scenario_averages.push_back({tag, sum / n});
    overall_sum += sum;
    overall_n += n;
  }
  doc.overall_count = overall_n;
  doc.overall_average = overall_n > 0 ? overall_sum / overall_n : 0.0;

  doc.cda_clean = cda_clean_model.map;
  doc.cda_backdoored = cda_backdoored_model.map;
  for (const auto& ap : cda_clean_model.per_class) {
    double backdoored = 0;
    for (const auto& bp : cda_backdoored_model.per_class)
      if (bp.class_name == ap.class_name) backdoored = bp.ap;
    doc.per_class_cda.push_back({ap.class_name, ap.ap, backdoored});
  }
  return doc;
}

}  // namespace cloakforge::eval
