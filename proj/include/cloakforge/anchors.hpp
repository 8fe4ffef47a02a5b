#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cloakforge/errors.hpp"
#include "cloakforge/metrics.hpp"
#include "cloakforge/rng.hpp"
#include "cloakforge/types.hpp"

namespace cloakforge::det {

struct AnchorConfig {
  std::vector<double> strides{4};                      // anchor grid pitch in px
  std::vector<double> scales{26};                      // sqrt of anchor area
  std::vector<double> aspect_ratios{0.42, 1.0, 2.0};   // width / height
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int sample_count = 256;
  double pos_fraction = 0.5;

  void validate() const {
    if (!(0 <= neg_iou && neg_iou < pos_iou && pos_iou <= 1))
      throw ValidationError("anchor config: need 0 <= neg_iou < pos_iou <= 1");
    if (sample_count <= 0) throw ValidationError("anchor config: sample_count must be > 0");
    if (pos_fraction < 0 || pos_fraction > 1)
      throw ValidationError("anchor config: pos_fraction must lie in [0, 1]");
    if (strides.empty() || scales.empty() || aspect_ratios.empty())
      throw ValidationError("anchor config: empty stride/scale/ratio list");
  }

  int anchors_per_position() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
};

struct AnchorSet {
  std::vector<BBox> boxes;
  int num_positions = 0;  // grid positions, the regression normalizer
};

// Anchors laid out position-row-major per stride, then scale-major and
// ratio-minor within a position. Boxes may extend past the image borders.
inline AnchorSet generate_anchors(const AnchorConfig& cfg, int image_w, int image_h) {
  cfg.validate();
  AnchorSet set;
  for (double stride : cfg.strides) {
    int gw = static_cast<int>(image_w / stride);
    int gh = static_cast<int>(image_h / stride);
    set.num_positions += gw * gh;
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        double cx = (gx + 0.5) * stride;
        double cy = (gy + 0.5) * stride;
        for (double scale : cfg.scales)
          for (double ratio : cfg.aspect_ratios) {
            double w = scale * std::sqrt(ratio);
            double h = scale / std::sqrt(ratio);
            set.boxes.push_back(BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
          }
      }
  }
  return set;
}

// Standard center/log-size box parameterization relative to an anchor.
inline void encode_box(const BBox& gt, const BBox& anchor, double out[4]) {
  out[0] = (gt.center_x() - anchor.center_x()) / anchor.width();
  out[1] = (gt.center_y() - anchor.center_y()) / anchor.height();
  out[2] = std::log(gt.width() / anchor.width());
  out[3] = std::log(gt.height() / anchor.height());
}

inline BBox decode_box(const BBox& anchor, const double t[4]) {
  double cx = anchor.center_x() + t[0] * anchor.width();
  double cy = anchor.center_y() + t[1] * anchor.height();
  double w = anchor.width() * std::exp(std::min(t[2], 4.0));
  double h = anchor.height() * std::exp(std::min(t[3], 4.0));
  return BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

enum class AnchorLabel : uint8_t { POSITIVE, NEGATIVE, IGNORE };

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;    // -1 when unmatched
  std::vector<uint8_t> flipped;   // trigger anchors forced negative
  std::vector<int> sampled;       // ascending indices of sampled pos+neg
  int num_positive = 0;
  int num_negative = 0;
  int cls_normalizer = 1;  // sampled anchors
  int reg_normalizer = 1;  // anchor positions
};

// Positive/negative selection with the trigger regulation:
//   rule 1  every non-trigger GT claims its best-IoU anchor as positive;
//   rule 2  anchors above pos_iou on a non-trigger GT are positive;
//   flip    anchors whose best GT is a trigger box and above pos_iou are
//           forced negative (the cloaking signal) and always sampled;
//   rule 3  anchors below neg_iou against every GT are negative candidates.
// Sampling keeps at most sample_count anchors with at most
// pos_fraction * sample_count positives. Ties break to the lowest index.
inline AnchorAssignment assign_anchors(const AnchorSet& anchors,
                                       const std::vector<ObjectAnnotation>& gts,
                                       const AnchorConfig& cfg, Rng& rng) {
  cfg.validate();
  const size_t n = anchors.boxes.size();
  if (n == 0) throw ValidationError("assign_anchors: empty anchor set");
  AnchorAssignment asg;
  asg.labels.assign(n, AnchorLabel::IGNORE);
  asg.matched_gt.assign(n, -1);
  asg.flipped.assign(n, 0);
  asg.reg_normalizer = std::max(1, anchors.num_positions);

  const size_t ng = gts.size();
  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> best_nontrigger_iou(n, 0.0);
  std::vector<int> best_nontrigger_gt(n, -1);
  std::vector<double> iou_matrix(n * ng, 0.0);
  for (size_t a = 0; a < n; ++a) {
    for (size_t g = 0; g < ng; ++g) {
      double v = metrics::iou(anchors.boxes[a], gts[g].bbox);
      iou_matrix[a * ng + g] = v;
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      if (!gts[g].is_trigger && v > best_nontrigger_iou[a]) {
        best_nontrigger_iou[a] = v;
        best_nontrigger_gt[a] = static_cast<int>(g);
      }
    }
  }

  // flip first: it outranks every positive rule on the same anchor
  for (size_t a = 0; a < n; ++a) {
    if (best_gt[a] >= 0 && gts[best_gt[a]].is_trigger && best_iou[a] > cfg.pos_iou) {
      asg.labels[a] = AnchorLabel::NEGATIVE;
      asg.flipped[a] = 1;
      asg.matched_gt[a] = best_gt[a];
    }
  }

  // rule 2
  for (size_t a = 0; a < n; ++a) {
    if (asg.flipped[a]) continue;
    if (best_nontrigger_gt[a] >= 0 && best_nontrigger_iou[a] > cfg.pos_iou) {
      asg.labels[a] = AnchorLabel::POSITIVE;
      asg.matched_gt[a] = best_nontrigger_gt[a];
    }
  }

  // rule 1: each non-trigger GT must own a positive anchor. When its argmax
  // anchor is flipped or already claimed by another GT, the next-best free
  // anchor steps in.
  std::vector<uint8_t> rule1(n, 0);
  for (size_t g = 0; g < ng; ++g) {
    if (gts[g].is_trigger) continue;  // never granted to a trigger GT
    bool owned = false;
    for (size_t a = 0; a < n && !owned; ++a)
      owned = asg.labels[a] == AnchorLabel::POSITIVE && asg.matched_gt[a] == static_cast<int>(g);
    if (owned) continue;
    int pick = -1;
    double pick_iou = -1.0;
    for (size_t a = 0; a < n; ++a) {
      if (asg.flipped[a] || asg.labels[a] == AnchorLabel::POSITIVE) continue;
      double v = iou_matrix[a * ng + g];
      if (v > pick_iou) {  // strict: ties go to the lowest anchor index
        pick_iou = v;
        pick = static_cast<int>(a);
      }
    }
    if (pick >= 0) {
      asg.labels[pick] = AnchorLabel::POSITIVE;
      asg.matched_gt[pick] = static_cast<int>(g);
      rule1[pick] = 1;
    }
  }

  // rule 3
  for (size_t a = 0; a < n; ++a)
    if (asg.labels[a] == AnchorLabel::IGNORE && best_iou[a] < cfg.neg_iou)
      asg.labels[a] = AnchorLabel::NEGATIVE;

  // sampling
  std::vector<int> positives, flipped_idx, negatives;
  for (size_t a = 0; a < n; ++a) {
    if (asg.labels[a] == AnchorLabel::POSITIVE)
      positives.push_back(static_cast<int>(a));
    else if (asg.flipped[a])
      flipped_idx.push_back(static_cast<int>(a));
    else if (asg.labels[a] == AnchorLabel::NEGATIVE)
      negatives.push_back(static_cast<int>(a));
  }
  const int max_pos = static_cast<int>(cfg.pos_fraction * cfg.sample_count);
  if (static_cast<int>(positives.size()) > max_pos) {
    // drop rule-2 extras at random; rule-1 owners stay
    std::vector<int> droppable;
    for (int a : positives)
      if (!rule1[a]) droppable.push_back(a);
    rng.shuffle(droppable);
    int to_drop = static_cast<int>(positives.size()) - max_pos;
    for (int i = 0; i < to_drop && i < static_cast<int>(droppable.size()); ++i)
      asg.labels[droppable[i]] = AnchorLabel::IGNORE;
    positives.clear();
    for (size_t a = 0; a < n; ++a)
      if (asg.labels[a] == AnchorLabel::POSITIVE) positives.push_back(static_cast<int>(a));
  }

  int neg_quota = cfg.sample_count - static_cast<int>(positives.size());
  // flipped anchors carry the attack signal and are always retained
  int random_negs = std::max(0, neg_quota - static_cast<int>(flipped_idx.size()));
  if (static_cast<int>(negatives.size()) > random_negs) {
    rng.shuffle(negatives);
    for (size_t i = random_negs; i < negatives.size(); ++i)
      asg.labels[negatives[i]] = AnchorLabel::IGNORE;
    negatives.resize(random_negs);
  }

  asg.sampled = positives;
  asg.sampled.insert(asg.sampled.end(), flipped_idx.begin(), flipped_idx.end());
  asg.sampled.insert(asg.sampled.end(), negatives.begin(), negatives.end());
  std::sort(asg.sampled.begin(), asg.sampled.end());
  asg.num_positive = static_cast<int>(positives.size());
  asg.num_negative = static_cast<int>(flipped_idx.size() + negatives.size());
  asg.cls_normalizer = std::max(1, static_cast<int>(asg.sampled.size()));
  return asg;
}

}  // namespace cloakforge::det
