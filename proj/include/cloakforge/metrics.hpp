#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cloakforge/errors.hpp"
#include "cloakforge/types.hpp"

namespace cloakforge::metrics {

struct Detection {
  std::string class_name;
  BBox bbox;
  double confidence = 0;  // in [0,1]
};

inline double iou(const BBox& a, const BBox& b) {
  double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (iw <= 0 || ih <= 0) return 0.0;
  double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

enum class MatchFlag { TP, FP, IGNORED };

struct MatchResult {
  std::vector<MatchFlag> det_flags;  // per detection, original order
  std::vector<int> det_matched_gt;   // -1 when unmatched
  std::vector<bool> gt_matched;
};

// Greedy one-to-one matching for a single class: detections in descending
// confidence order (ties keep input order) each claim their max-IoU unmatched
// ground truth; TP iff that IoU >= threshold. GT ties break to the lowest
// index. Detections landing on a `difficult` GT are IGNORED (neither TP nor
// FP), the standard VOC treatment.
inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<BBox>& gts,
                                    double iou_threshold = 0.5,
                                    const std::vector<bool>& gt_difficult = {}) {
  MatchResult res;
  res.det_flags.assign(dets.size(), MatchFlag::FP);
  res.det_matched_gt.assign(dets.size(), -1);
  res.gt_matched.assign(gts.size(), false);

  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });

  auto difficult = [&](size_t g) {
    return g < gt_difficult.size() && gt_difficult[g];
  };

  for (size_t d : order) {
    int best_gt = -1;
    double best_iou = 0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (res.gt_matched[g] || difficult(g)) continue;
      double v = iou(dets[d].bbox, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_iou >= iou_threshold) {
      res.det_flags[d] = MatchFlag::TP;
      res.det_matched_gt[d] = best_gt;
      res.gt_matched[best_gt] = true;
      continue;
    }
    // A miss that still sits on a difficult GT does not count against us.
    double best_diff_iou = 0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (!difficult(g)) continue;
      best_diff_iou = std::max(best_diff_iou, iou(dets[d].bbox, gts[g]));
    }
    res.det_flags[d] = best_diff_iou >= iou_threshold ? MatchFlag::IGNORED : MatchFlag::FP;
  }
  return res;
}

struct APResult {
  std::string class_name;
  double ap = 0;
  std::vector<std::pair<double, double>> pr_points;  // (recall, precision)
};

enum class APInterpolation {
  AllPoint,     // exact area under the monotone precision envelope
  ElevenPoint,  // historical 11-point variant, for reference
};

// Computes AP for one class from pooled detections. `confidences` and `flags`
// are parallel; `num_gt` counts non-difficult ground truths. Sweeps every
// distinct confidence as a threshold (tied detections enter together).
inline APResult average_precision(const std::vector<double>& confidences,
                                  const std::vector<MatchFlag>& flags, int num_gt,
                                  APInterpolation interp = APInterpolation::AllPoint,
                                  std::string class_name = "") {
  if (confidences.size() != flags.size())
    throw ShapeError("average_precision: confidences and flags differ in length");
  APResult res;
  res.class_name = std::move(class_name);
  if (num_gt <= 0) return res;

  std::vector<std::pair<double, MatchFlag>> rows;
  rows.reserve(confidences.size());
  for (size_t i = 0; i < confidences.size(); ++i)
    if (flags[i] != MatchFlag::IGNORED) rows.emplace_back(confidences[i], flags[i]);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  int tp = 0, fp = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    tp += rows[i].second == MatchFlag::TP;
    fp += rows[i].second == MatchFlag::FP;
    // Emit a P-R point only once per distinct confidence value.
    if (i + 1 < rows.size() && rows[i + 1].first == rows[i].first) continue;
    double recall = static_cast<double>(tp) / num_gt;
    double precision = static_cast<double>(tp) / (tp + fp);
    res.pr_points.emplace_back(recall, precision);
  }
  if (tp == 0) return res;  // no true positives, AP stays 0

  if (interp == APInterpolation::AllPoint) {
    // Monotone non-increasing precision envelope, integrated over recall.
    double env = 0, ap = 0, prev_recall;
    for (size_t i = res.pr_points.size(); i-- > 0;) {
      env = std::max(env, res.pr_points[i].second);
      prev_recall = i == 0 ? 0.0 : res.pr_points[i - 1].first;
      ap += (res.pr_points[i].first - prev_recall) * env;
    }
    res.ap = ap;
  } else {
    double sum = 0;
    for (int k = 0; k <= 10; ++k) {
      double r = k / 10.0;
      double best = 0;
      for (const auto& [recall, precision] : res.pr_points)
        if (recall >= r) best = std::max(best, precision);
      sum += best;
    }
    res.ap = sum / 11.0;
  }
  return res;
}

// CDA: unweighted mean of per-class AP.
inline double mean_ap(const std::vector<APResult>& per_class) {
  if (per_class.empty()) throw EmptyInputError("mean_ap: no classes");
  double sum = 0;
  for (const auto& r : per_class) sum += r.ap;
  return sum / per_class.size();
}

// Per-class accumulator pooling detections across frames before AP.
struct ApAccumulator {
  std::string class_name;
  std::vector<double> confidences;
  std::vector<MatchFlag> flags;
  int num_gt = 0;

  void add_frame(const std::vector<Detection>& dets, const std::vector<BBox>& gts,
                 const std::vector<bool>& gt_difficult = {}, double iou_threshold = 0.5) {
    MatchResult m = match_detections(dets, gts, iou_threshold, gt_difficult);
    for (size_t i = 0; i < dets.size(); ++i) {
      confidences.push_back(dets[i].confidence);
      flags.push_back(m.det_flags[i]);
    }
    for (size_t g = 0; g < gts.size(); ++g)
      if (!(g < gt_difficult.size() && gt_difficult[g])) ++num_gt;
  }

  APResult result(APInterpolation interp = APInterpolation::AllPoint) const {
    return average_precision(confidences, flags, num_gt, interp, class_name);
  }
};

struct FrameVerdict {
  std::string frame_id;
  BBox trigger_gt;
  double best_iou = 0;
  bool cloaked = false;  // invariant: cloaked <=> best_iou < 0.5
};

inline constexpr double kCloakIouThreshold = 0.5;

inline FrameVerdict make_frame_verdict(std::string frame_id, const BBox& trigger_gt,
                                       double best_iou) {
  // Strict inequality: a detection at exactly 0.5 IoU counts as found.
  return FrameVerdict{std::move(frame_id), trigger_gt, best_iou,
                      best_iou < kCloakIouThreshold};
}

// Attack success rate as a percentage of frames whose trigger person stayed
// below the cloaking IoU threshold.
inline double asr(const std::vector<FrameVerdict>& verdicts) {
  if (verdicts.empty()) throw EmptyInputError("asr: no verdicts");
  int cloaked = 0;
  for (const auto& v : verdicts) cloaked += v.cloaked;
  return 100.0 * cloaked / verdicts.size();
}

// Detection log CSV: frame_id,class,xmin,ymin,xmax,ymax,confidence
inline void save_detection_log(const std::filesystem::path& path,
                               const std::vector<std::pair<std::string, Detection>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write detection log: " + path.string());
  out << "frame_id,class,xmin,ymin,xmax,ymax,confidence\n";
  char buf[352];
  for (const auto& [frame_id, d] : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", frame_id.c_str(),
                  d.class_name.c_str(), d.bbox.xmin, d.bbox.ymin, d.bbox.xmax, d.bbox.ymax,
                  d.confidence);
    out << buf;
  }
}

inline std::vector<std::pair<std::string, Detection>> load_detection_log(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open detection log: " + path.string());
  std::vector<std::pair<std::string, Detection>> rows;
  std::string line;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 7)
      throw ParseError("detection log line " + std::to_string(lineno) + ": expected 7 fields");
    Detection d;
    d.class_name = fields[1];
    try {
      d.bbox = BBox{std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]),
                    std::stod(fields[5])};
      d.confidence = std::stod(fields[6]);
    } catch (const std::exception&) {
      throw ParseError("detection log line " + std::to_string(lineno) + ": bad number");
    }
    rows.emplace_back(fields[0], std::move(d));
  }
  return rows;
}

}  // namespace cloakforge::metrics
