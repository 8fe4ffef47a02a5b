#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cloakforge/detector.hpp"
#include "cloakforge/errors.hpp"
#include "cloakforge/eval.hpp"
#include "cloakforge/train.hpp"

namespace cloakforge::transfer {

struct TransferSpec {
  std::vector<std::string> new_classes;
  det::TrainSchedule schedule{10, 32, 20, 8, 1e-3, 5e-4};
  uint64_t seed = 0;
  double init_noise_std = 0.01;
};

// Copies a model while appending rows for new classes to its class-scoring
// layer. Old-class logits are bit-identical at initialization; the fresh
// rows start as small zero-mean noise.
inline det::DetectorModel widen_classes(const det::DetectorModel& base,
                                        const std::vector<std::string>& new_classes,
                                        uint64_t seed, double noise_std = 0.01) {
  using det::DetectorKind;
  std::set<std::string> existing(base.classes.begin(), base.classes.end());
  for (const auto& c : new_classes)
    if (existing.count(c))
      throw ClassConflictError("transfer: class '" + c + "' already present");
  if (new_classes.empty()) throw ValidationError("transfer: no new classes given");

  std::vector<std::string> classes = base.classes;
  classes.insert(classes.end(), new_classes.begin(), new_classes.end());
  det::DetectorModel wide =
      base.kind == DetectorKind::ONE_STAGE
          ? det::make_one_stage(classes, seed, base.input_w, base.backbone_cfg)
          : det::make_two_stage(classes, seed, base.input_w, base.anchor_cfg,
                                base.backbone_cfg);
  wide.grid_base_w = base.grid_base_w;
  wide.grid_base_h = base.grid_base_h;
  wide.roi_cfg = base.roi_cfg;

  Rng rng(derive_seed(seed, 0x1DE));
  auto src = const_cast<det::DetectorModel&>(base).named_parameters();
  auto dst = wide.named_parameters();
  for (size_t i = 0; i < dst.size(); ++i) {
    det::Tensor& d = *dst[i].second;
    const det::Tensor& s = *src[i].second;
    if (d.same_shape(s)) {
      d = s;
      continue;
    }
    // the widened tensor: leading rows copied, appended rows noise-seeded
    for (size_t k = 0; k < d.size(); ++k)
      d[k] = k < s.size() ? s[k] : rng.normal() * noise_std;
  }
  return wide;
}

// Widen, then fine-tune on a clean manifest that includes the new classes:
// phase one trains only the widened output layer, phase two trains all
// layers. Plain (non-regulated) training throughout, like the downstream
// user would run.
inline det::DetectorModel extend_and_finetune(const det::DetectorModel& backdoored,
                                              const DatasetManifest& manifest,
                                              const TransferSpec& spec) {
  det::DetectorModel model =
      widen_classes(backdoored, spec.new_classes, spec.seed, spec.init_noise_std);

  // the manifest must actually cover the new categories
  std::set<std::string> wanted(spec.new_classes.begin(), spec.new_classes.end());
  for (const auto& e : manifest.entries) {
    if (wanted.empty()) break;
    if (e.split != "train") continue;
    FrameAnnotation f = voc::load_annotation(manifest.resolve(e.annotation_path));
    for (const auto& o : f.objects) wanted.erase(o.class_name);
  }
  if (!wanted.empty())
    throw ValidationError("transfer: manifest lacks new class '" + *wanted.begin() + "'");

  det::TrainOptions opts;
  opts.schedule = spec.schedule;
  opts.seed = spec.seed;
  opts.regulated = false;
  opts.freeze_mode = det::FreezeMode::ALL_BUT_OUTPUT;
  det::train_detector(model, manifest, opts);
  return model;
}

struct RetentionRow {
  std::string video_id;
  double before = 0;
  double after = 0;
  bool not_applicable = false;
};

struct RetentionReport {
  std::vector<RetentionRow> rows;
  double avg_before = 0, avg_after = 0;
  double retention = 0;  // avg_after / avg_before

  std::string to_csv() const {
    std::ostringstream ss;
    ss << "video_id,asr_before,asr_after\n";
    char buf[160];
    for (const auto& r : rows) {
      if (r.not_applicable) {
        ss << r.video_id << ",N/A,N/A\n";
      } else {
        std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f\n", r.video_id.c_str(), r.before,
                      r.after);
        ss << buf;
      }
    }
    std::snprintf(buf, sizeof(buf), "average,%.2f,%.2f\nretention,%.4f,\n", avg_before,
                  avg_after, retention);
    ss << buf;
    return ss.str();
  }
};

// Pairs up per-video ASR before and after transfer. Videos must match by id;
// N/A rows are carried through but excluded from the averages.
inline RetentionReport compare_asr(const std::vector<eval::VideoEvalResult>& before,
                                   const std::vector<eval::VideoEvalResult>& after) {
  if (before.size() != after.size())
    throw AlignmentError("compare_asr: result lists differ in length");
  RetentionReport report;
  double sum_before = 0, sum_after = 0;
  int n = 0;
  for (size_t i = 0; i < before.size(); ++i) {
    if (before[i].meta.video_id != after[i].meta.video_id)
      throw AlignmentError("compare_asr: video id mismatch at row " + std::to_string(i) +
                           " ('" + before[i].meta.video_id + "' vs '" +
                           after[i].meta.video_id + "')");
    RetentionRow row;
    row.video_id = before[i].meta.video_id;
    row.not_applicable = before[i].not_applicable || after[i].not_applicable;
    row.before = before[i].asr;
    row.after = after[i].asr;
    report.rows.push_back(row);
    if (!row.not_applicable) {
      sum_before += row.before;
      sum_after += row.after;
      ++n;
    }
  }
  if (n > 0) {
    report.avg_before = sum_before / n;
    report.avg_after = sum_after / n;
    report.retention = report.avg_before > 0 ? report.avg_after / report.avg_before : 0.0;
  }
  return report;
}

}  // namespace cloakforge::transfer
