#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cloakforge/anchors.hpp"
#include "cloakforge/errors.hpp"
#include "cloakforge/net.hpp"
#include "cloakforge/tensor.hpp"
#include "cloakforge/types.hpp"

namespace cloakforge::det {

inline double smooth_l1_scalar(double d) {
  double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

inline double smooth_l1_grad(double d) {
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

// Mean SmoothL1 over all elements of two same-shape tensors.
inline double smooth_l1(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("smooth_l1: shapes " + shape_string(a) + " vs " + shape_string(b));
  if (a.size() == 0) throw ShapeError("smooth_l1: empty tensors");
  double sum = 0;
  for (size_t i = 0; i < a.size(); ++i) sum += smooth_l1_scalar(a[i] - b[i]);
  return sum / a.size();
}

// Per-epoch / per-batch loss record. l_o and total are derived so the
// bookkeeping identity holds by construction.
struct LossBreakdown {
  double l_f = 0;
  double l_rpn_cls = 0, l_rpn_reg = 0;
  double l_head_cls = 0, l_head_reg = 0;
  double lambda = 1.0;

  double l_rpn() const { return l_rpn_cls + l_rpn_reg; }
  double l_head() const { return l_head_cls + l_head_reg; }
  double l_o() const { return l_rpn() + l_head(); }
  double total() const { return l_f + l_o(); }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    l_f += o.l_f;
    l_rpn_cls += o.l_rpn_cls;
    l_rpn_reg += o.l_rpn_reg;
    l_head_cls += o.l_head_cls;
    l_head_reg += o.l_head_reg;
    return *this;
  }
  LossBreakdown scaled(double s) const {
    LossBreakdown r = *this;
    r.l_f *= s;
    r.l_rpn_cls *= s;
    r.l_rpn_reg *= s;
    r.l_head_cls *= s;
    r.l_head_reg *= s;
    return r;
  }
};

enum class Stage { RPN, HEAD };

// Per-anchor predictions aligned with an AnchorSet / RoI list.
// RPN classifies background/foreground (2 logits); the head classifies
// background plus every object class.
struct StagePredictions {
  Tensor cls_logits;  // [n, nc]
  Tensor box_deltas;  // [n, 4]
};

struct StageLoss {
  double cls = 0, reg = 0;
};

// Classification + gated regression loss over the sampled anchors:
//   cls = (1/N_cls) sum CE(p_i, p_i*)
//   reg = lambda (1/N_reg) sum_{positives} per-coordinate SmoothL1(t_i - t_i*)
// Flipped anchors train as background and, being non-positive, never
// contribute regression terms. Analytic gradients land in `grad` when given.
inline StageLoss detection_loss(Stage stage, const StagePredictions& preds,
                                const AnchorAssignment& asg,
                                const std::vector<BBox>& anchor_boxes,
                                const std::vector<ObjectAnnotation>& gts,
                                const std::vector<std::string>& classes, double lambda,
                                StagePredictions* grad = nullptr) {
  const size_t n = anchor_boxes.size();
  if (asg.labels.size() != n || preds.cls_logits.dim(0) != static_cast<int>(n) ||
      preds.box_deltas.dim(0) != static_cast<int>(n) || preds.box_deltas.dim(1) != 4)
    throw ShapeError("detection_loss: predictions not aligned with anchors");
  const int nc = preds.cls_logits.dim(1);
  if (stage == Stage::RPN && nc != 2)
    throw ShapeError("detection_loss: RPN expects 2 class logits");
  if (stage == Stage::HEAD && nc != static_cast<int>(classes.size()) + 1)
    throw ShapeError("detection_loss: head expects background + class logits");
  if (asg.sampled.empty()) throw EmptyBatchError("detection_loss: no sampled anchors");

  auto class_index = [&](const std::string& name) {
    for (size_t c = 0; c < classes.size(); ++c)
      if (classes[c] == name) return static_cast<int>(c);
    throw ValidationError("detection_loss: unknown class '" + name + "'");
  };

  const double n_cls = asg.cls_normalizer;
  const double n_reg = asg.reg_normalizer;
  StageLoss loss;
  std::vector<double> probs(nc);
  for (int i : asg.sampled) {
    const bool positive = asg.labels[i] == AnchorLabel::POSITIVE;
    int target = 0;
    if (positive) {
      target = stage == Stage::RPN
                   ? 1
                   : 1 + class_index(gts[asg.matched_gt[i]].class_name);
    }
    softmax_row(preds.cls_logits.data() + static_cast<size_t>(i) * nc, probs.data(), nc);
    loss.cls += -std::log(std::max(probs[target], 1e-300)) / n_cls;
    if (grad)
      for (int c = 0; c < nc; ++c)
        grad->cls_logits.at(i, c) += (probs[c] - (c == target ? 1.0 : 0.0)) / n_cls;

    if (positive && asg.matched_gt[i] >= 0) {
      double target_t[4];
      encode_box(gts[asg.matched_gt[i]].bbox, anchor_boxes[i], target_t);
      for (int c = 0; c < 4; ++c) {
        const double d = preds.box_deltas.at(i, c) - target_t[c];
        loss.reg += lambda * smooth_l1_scalar(d) / n_reg;
        if (grad) grad->box_deltas.at(i, c) += lambda * smooth_l1_grad(d) / n_reg;
      }
    }
  }
  return loss;
}

inline StagePredictions make_zero_grad_like(const StagePredictions& preds) {
  StagePredictions g;
  g.cls_logits = Tensor(preds.cls_logits.shape());
  g.box_deltas = Tensor(preds.box_deltas.shape());
  return g;
}

}  // namespace cloakforge::det
