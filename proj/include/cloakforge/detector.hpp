#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cloakforge/anchors.hpp"
#include "cloakforge/errors.hpp"
#include "cloakforge/image.hpp"
#include "cloakforge/losses.hpp"
#include "cloakforge/metrics.hpp"
#include "cloakforge/net.hpp"
#include "cloakforge/poison.hpp"
#include "cloakforge/rng.hpp"
#include "cloakforge/tensor.hpp"
#include "cloakforge/types.hpp"

namespace cloakforge::det {

enum class DetectorKind { ONE_STAGE, TWO_STAGE };

struct BackboneConfig {
  std::vector<int> channels{8, 16, 24, 32};
  std::vector<int> strides{2, 2, 2, 1};
};

// Small convnet: stride-2 blocks down to the shared feature map, ReLU after
// every convolution.
struct Backbone {
  std::vector<Conv2d> convs;

  struct Cache {
    std::vector<Tensor> inputs;  // input to conv i
    std::vector<Tensor> pre;     // pre-activation output of conv i
  };

  void configure(const BackboneConfig& cfg, Rng& rng) {
    convs.clear();
    int in = 3;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      Conv2d c;
      c.configure(in, cfg.channels[i], 3, cfg.strides[i], rng);
      convs.push_back(std::move(c));
      in = cfg.channels[i];
    }
  }

  Tensor forward(const Tensor& image, Cache* cache = nullptr) const {
    Tensor cur = image;
    for (const auto& conv : convs) {
      Tensor pre = conv.forward(cur);
      if (cache) {
        cache->inputs.push_back(cur);
        cache->pre.push_back(pre);
      }
      cur = relu(pre);
    }
    return cur;
  }

  // Accumulates parameter gradients; image gradients are discarded.
  void backward(const Cache& cache, Tensor dout) {
    for (size_t i = convs.size(); i-- > 0;) {
      Tensor dpre = relu_backward(cache.pre[i], dout);
      dout = convs[i].backward(cache.inputs[i], dpre, i > 0);
    }
  }

  void zero_grad() {
    for (auto& c : convs) c.zero_grad();
  }
};

// One-stage grid predictor: each feature cell emits one box, an objectness
// logit and class logits.  Channel layout per cell: [tx ty tw th obj cls...].
struct GridHead {
  Conv2d conv;
};

struct RpnHead {
  Conv2d conv;  // 3x3 mixing conv
  Conv2d cls;   // 1x1 -> anchors_per_cell * 2
  Conv2d reg;   // 1x1 -> anchors_per_cell * 4
};

struct RoiHead {
  Linear fc1;
  Linear cls;  // hidden -> 1 + classes
  Linear reg;  // hidden -> 4, class-agnostic
};

inline constexpr double kGridObjPosWeight = 8.0;  // rebalances 64 cells vs few objects

struct DetectorModel {
  DetectorKind kind = DetectorKind::ONE_STAGE;
  std::vector<std::string> classes;
  int input_w = 64, input_h = 64;
  BackboneConfig backbone_cfg;
  Backbone backbone;
  int feat_stride = 1, feat_w = 0, feat_h = 0, feat_c = 0;

  // one-stage
  GridHead grid;
  double grid_base_w = 20, grid_base_h = 32;

  // two-stage
  AnchorConfig anchor_cfg;  // RPN anchors + sampling quotas
  AnchorConfig roi_cfg;     // head RoI thresholds + quotas
  int rpn_hidden = 32, roi_hidden = 64, roi_pool = 2;
  RpnHead rpn;
  RoiHead roi;
  AnchorSet anchors;
  int anchor_grid_ratio = 1;  // anchor positions per feature cell edge

  int class_index(const std::string& name) const {
    for (size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == name) return static_cast<int>(i);
    return -1;
  }

  int anchors_per_cell() const {
    return anchor_grid_ratio * anchor_grid_ratio * anchor_cfg.anchors_per_position();
  }

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < backbone.convs.size(); ++i) {
      out.emplace_back("backbone.conv" + std::to_string(i) + ".w", &backbone.convs[i].w);
      out.emplace_back("backbone.conv" + std::to_string(i) + ".b", &backbone.convs[i].b);
    }
    if (kind == DetectorKind::ONE_STAGE) {
      out.emplace_back("grid.conv.w", &grid.conv.w);
      out.emplace_back("grid.conv.b", &grid.conv.b);
    } else {
      out.emplace_back("rpn.conv.w", &rpn.conv.w);
      out.emplace_back("rpn.conv.b", &rpn.conv.b);
      out.emplace_back("rpn.cls.w", &rpn.cls.w);
      out.emplace_back("rpn.cls.b", &rpn.cls.b);
      out.emplace_back("rpn.reg.w", &rpn.reg.w);
      out.emplace_back("rpn.reg.b", &rpn.reg.b);
      out.emplace_back("roi.fc1.w", &roi.fc1.w);
      out.emplace_back("roi.fc1.b", &roi.fc1.b);
      out.emplace_back("roi.cls.w", &roi.cls.w);
      out.emplace_back("roi.cls.b", &roi.cls.b);
      out.emplace_back("roi.reg.w", &roi.reg.w);
      out.emplace_back("roi.reg.b", &roi.reg.b);
    }
    return out;
  }

  // grads aligned with named_parameters()
  std::vector<Tensor*> gradients() {
    std::vector<Tensor*> out;
    for (auto& c : backbone.convs) {
      out.push_back(&c.dw);
      out.push_back(&c.db);
    }
    if (kind == DetectorKind::ONE_STAGE) {
      out.push_back(&grid.conv.dw);
      out.push_back(&grid.conv.db);
    } else {
      out.push_back(&rpn.conv.dw);
      out.push_back(&rpn.conv.db);
      out.push_back(&rpn.cls.dw);
      out.push_back(&rpn.cls.db);
      out.push_back(&rpn.reg.dw);
      out.push_back(&rpn.reg.db);
      out.push_back(&roi.fc1.dw);
      out.push_back(&roi.fc1.db);
      out.push_back(&roi.cls.dw);
      out.push_back(&roi.cls.db);
      out.push_back(&roi.reg.dw);
      out.push_back(&roi.reg.db);
    }
    return out;
  }

  bool is_backbone_param(const std::string& name) const {
    return name.rfind("backbone.", 0) == 0;
  }

  // the class-scoring layer, the one widened by transfer learning
  bool is_output_param(const std::string& name) const {
    return kind == DetectorKind::ONE_STAGE ? name.rfind("grid.conv.", 0) == 0
                                           : name.rfind("roi.cls.", 0) == 0;
  }

  void zero_grad() {
    backbone.zero_grad();
    grid.conv.zero_grad();
    rpn.conv.zero_grad();
    rpn.cls.zero_grad();
    rpn.reg.zero_grad();
    roi.fc1.zero_grad();
    roi.cls.zero_grad();
    roi.reg.zero_grad();
  }
};

namespace detail {

inline void finalize_backbone_shape(DetectorModel& m) {
  Tensor probe({m.input_h, m.input_w, 3});
  Tensor feat = m.backbone.forward(probe);
  m.feat_h = feat.dim(0);
  m.feat_w = feat.dim(1);
  m.feat_c = feat.dim(2);
  int stride = 1;
  for (int s : m.backbone_cfg.strides) stride *= s;
  m.feat_stride = stride;
  // fixed-shape contract for the shared feature map
  if (m.feat_h != m.input_h / stride || m.feat_w != m.input_w / stride)
    throw ShapeError("backbone: unexpected feature map shape");
}

}  // namespace detail

inline DetectorModel make_one_stage(const std::vector<std::string>& classes, uint64_t seed,
                                    int input = 64, BackboneConfig bb = {}) {
  if (classes.empty()) throw ValidationError("detector: class list is empty");
  DetectorModel m;
  m.kind = DetectorKind::ONE_STAGE;
  m.classes = classes;
  m.input_w = m.input_h = input;
  m.backbone_cfg = std::move(bb);
  Rng rng(derive_seed(seed, 0x0D37));
  m.backbone.configure(m.backbone_cfg, rng);
  detail::finalize_backbone_shape(m);
  m.grid.conv.configure(m.feat_c, 5 + static_cast<int>(classes.size()), 3, 1, rng);
  return m;
}

inline DetectorModel make_two_stage(const std::vector<std::string>& classes, uint64_t seed,
                                    int input = 64, AnchorConfig anchor_cfg = {},
                                    BackboneConfig bb = {}) {
  if (classes.empty()) throw ValidationError("detector: class list is empty");
  anchor_cfg.validate();
  if (anchor_cfg.strides.size() != 1)
    throw ValidationError("two-stage model: exactly one anchor stride is supported");
  DetectorModel m;
  m.kind = DetectorKind::TWO_STAGE;
  m.classes = classes;
  m.input_w = m.input_h = input;
  m.backbone_cfg = std::move(bb);
  m.anchor_cfg = std::move(anchor_cfg);
  m.roi_cfg.strides = m.anchor_cfg.strides;
  m.roi_cfg.scales = m.anchor_cfg.scales;
  m.roi_cfg.aspect_ratios = m.anchor_cfg.aspect_ratios;
  m.roi_cfg.pos_iou = 0.5;
  m.roi_cfg.neg_iou = 0.4;
  m.roi_cfg.sample_count = 32;
  m.roi_cfg.pos_fraction = 0.5;
  Rng rng(derive_seed(seed, 0x2D37));
  m.backbone.configure(m.backbone_cfg, rng);
  detail::finalize_backbone_shape(m);

  double astride = m.anchor_cfg.strides[0];
  if (std::fmod(m.feat_stride, astride) != 0.0)
    throw ValidationError("two-stage model: anchor stride must divide the feature stride");
  m.anchor_grid_ratio = static_cast<int>(m.feat_stride / astride);
  m.anchors = generate_anchors(m.anchor_cfg, m.input_w, m.input_h);

  m.rpn.conv.configure(m.feat_c, m.rpn_hidden, 3, 1, rng);
  m.rpn.cls.configure(m.rpn_hidden, m.anchors_per_cell() * 2, 1, 1, rng);
  m.rpn.reg.configure(m.rpn_hidden, m.anchors_per_cell() * 4, 1, 1, rng);
  int pool_dim = m.roi_pool * m.roi_pool * m.feat_c;
  m.roi.fc1.configure(pool_dim, m.roi_hidden, rng);
  m.roi.cls.configure(m.roi_hidden, 1 + static_cast<int>(classes.size()), rng);
  m.roi.reg.configure(m.roi_hidden, 4, rng);
  return m;
}

// ---------------------------------------------------------------------------
// NMS

// Greedy same-class suppression: keep a detection iff its IoU with every
// already-kept detection of its class stays at or below the threshold.
inline std::vector<metrics::Detection> nms(const std::vector<metrics::Detection>& dets,
                                           double iou_threshold) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<metrics::Detection> kept;
  for (size_t idx : order) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_name != dets[idx].class_name) continue;
      if (metrics::iou(k.bbox, dets[idx].bbox) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// One-stage targets and loss

struct GridTargets {
  Tensor obj;  // [gh, gw, 1] in {0, 1}
  Tensor cls;  // [gh, gw, 1] class index, -1 when free
  Tensor box;  // [gh, gw, 4] encoded targets
};

// Cell ownership by object center; the first object to claim a cell keeps
// it. An object absent from the annotation (an erased trigger) contributes
// nothing anywhere.
inline GridTargets build_grid_targets(const FrameAnnotation& frame, const DetectorModel& m) {
  GridTargets t;
  t.obj = Tensor({m.feat_h, m.feat_w, 1});
  t.cls = Tensor({m.feat_h, m.feat_w, 1}, -1.0);
  t.box = Tensor({m.feat_h, m.feat_w, 4});
  for (const auto& o : frame.objects) {
    int ci = m.class_index(o.class_name);
    if (ci < 0) throw ValidationError("grid targets: unknown class '" + o.class_name + "'");
    int gx = std::clamp(static_cast<int>(o.bbox.center_x() / m.feat_stride), 0, m.feat_w - 1);
    int gy = std::clamp(static_cast<int>(o.bbox.center_y() / m.feat_stride), 0, m.feat_h - 1);
    if (t.obj.at(gy, gx, 0) != 0.0) continue;
    t.obj.at(gy, gx, 0) = 1.0;
    t.cls.at(gy, gx, 0) = ci;
    t.box.at(gy, gx, 0) = o.bbox.center_x() / m.feat_stride - gx;
    t.box.at(gy, gx, 1) = o.bbox.center_y() / m.feat_stride - gy;
    t.box.at(gy, gx, 2) = std::log(o.bbox.width() / m.grid_base_w);
    t.box.at(gy, gx, 3) = std::log(o.bbox.height() / m.grid_base_h);
  }
  return t;
}

namespace detail {

// Objectness BCE over every cell plus class CE and box SmoothL1 on occupied
// cells. Returns (cls_part, reg_part) and fills dout when given.
inline std::pair<double, double> grid_loss(const DetectorModel& m, const Tensor& out,
                                           const GridTargets& targets, double lambda,
                                           Tensor* dout) {
  const int gh = m.feat_h, gw = m.feat_w;
  const int nc = static_cast<int>(m.classes.size());
  const double n_cells = gh * gw;
  int n_pos = 0;
  for (int i = 0; i < gh * gw; ++i) n_pos += targets.obj[i] > 0;
  const double pos_norm = std::max(1, n_pos);

  double cls_part = 0, reg_part = 0;
  std::vector<double> probs(nc);
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      const double obj_logit = out.at(y, x, 4);
      const double target = targets.obj.at(y, x, 0);
      const double p = sigmoid(obj_logit);
      const double weight = target > 0 ? kGridObjPosWeight : 1.0;
      cls_part += -weight *
                  (target * std::log(std::max(p, 1e-300)) +
                   (1 - target) * std::log(std::max(1 - p, 1e-300))) /
                  n_cells;
      if (dout) dout->at(y, x, 4) += weight * (p - target) / n_cells;
      if (target <= 0) continue;

      const int ci = static_cast<int>(targets.cls.at(y, x, 0));
      std::vector<double> logits(nc);
      for (int c = 0; c < nc; ++c) logits[c] = out.at(y, x, 5 + c);
      softmax_row(logits.data(), probs.data(), nc);
      cls_part += -std::log(std::max(probs[ci], 1e-300)) / pos_norm;
      if (dout)
        for (int c = 0; c < nc; ++c)
          dout->at(y, x, 5 + c) += (probs[c] - (c == ci ? 1.0 : 0.0)) / pos_norm;

      for (int k = 0; k < 4; ++k) {
        double pred = out.at(y, x, k);
        double d;
        if (k < 2) {
          double s = sigmoid(pred);
          d = s - targets.box.at(y, x, k);
          reg_part += lambda * smooth_l1_scalar(d) / pos_norm;
          if (dout)
            dout->at(y, x, k) += lambda * smooth_l1_grad(d) * s * (1 - s) / pos_norm;
        } else {
          d = pred - targets.box.at(y, x, k);
          reg_part += lambda * smooth_l1_scalar(d) / pos_norm;
          if (dout) dout->at(y, x, k) += lambda * smooth_l1_grad(d) / pos_norm;
        }
      }
    }
  }
  return {cls_part, reg_part};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two-stage plumbing

namespace detail {

// Flattens the RPN conv outputs into per-anchor predictions matching the
// generate_anchors ordering.
inline StagePredictions flatten_rpn(const DetectorModel& m, const Tensor& cls_out,
                                    const Tensor& reg_out) {
  const int n = static_cast<int>(m.anchors.boxes.size());
  const int r = m.anchor_grid_ratio;
  const int spp = m.anchor_cfg.anchors_per_position();
  const int gw = m.feat_w * r;
  StagePredictions preds;
  preds.cls_logits = Tensor({n, 2});
  preds.box_deltas = Tensor({n, 4});
  for (int fy = 0; fy < m.feat_h; ++fy)
    for (int fx = 0; fx < m.feat_w; ++fx)
      for (int j = 0; j < m.anchors_per_cell(); ++j) {
        const int sub = j / spp, sr = j % spp;
        const int gy = fy * r + sub / r, gx = fx * r + sub % r;
        const int a = (gy * gw + gx) * spp + sr;
        preds.cls_logits.at(a, 0) = cls_out.at(fy, fx, 2 * j);
        preds.cls_logits.at(a, 1) = cls_out.at(fy, fx, 2 * j + 1);
        for (int k = 0; k < 4; ++k) preds.box_deltas.at(a, k) = reg_out.at(fy, fx, 4 * j + k);
      }
  return preds;
}

// Scatters per-anchor gradients back onto the conv output grids.
inline void unflatten_rpn_grad(const DetectorModel& m, const StagePredictions& grad,
                               Tensor& dcls_out, Tensor& dreg_out) {
  const int r = m.anchor_grid_ratio;
  const int spp = m.anchor_cfg.anchors_per_position();
  const int gw = m.feat_w * r;
  for (int fy = 0; fy < m.feat_h; ++fy)
    for (int fx = 0; fx < m.feat_w; ++fx)
      for (int j = 0; j < m.anchors_per_cell(); ++j) {
        const int sub = j / spp, sr = j % spp;
        const int gy = fy * r + sub / r, gx = fx * r + sub % r;
        const int a = (gy * gw + gx) * spp + sr;
        dcls_out.at(fy, fx, 2 * j) += grad.cls_logits.at(a, 0);
        dcls_out.at(fy, fx, 2 * j + 1) += grad.cls_logits.at(a, 1);
        for (int k = 0; k < 4; ++k) dreg_out.at(fy, fx, 4 * j + k) += grad.box_deltas.at(a, k);
      }
}

struct Proposal {
  BBox box;
  double score;
};

inline std::vector<BBox> make_proposals(const DetectorModel& m, const StagePredictions& rpn,
                                        int pre_nms, int post_nms, double nms_iou,
                                        double min_size) {
  const int n = static_cast<int>(m.anchors.boxes.size());
  std::vector<Proposal> cands;
  cands.reserve(n);
  for (int a = 0; a < n; ++a) {
    double probs[2];
    double logits[2] = {rpn.cls_logits.at(a, 0), rpn.cls_logits.at(a, 1)};
    softmax_row(logits, probs, 2);
    double t[4] = {rpn.box_deltas.at(a, 0), rpn.box_deltas.at(a, 1), rpn.box_deltas.at(a, 2),
                   rpn.box_deltas.at(a, 3)};
    BBox b = decode_box(m.anchors.boxes[a], t).clipped(m.input_w, m.input_h);
    if (b.width() < min_size || b.height() < min_size) continue;
    cands.push_back({b, probs[1]});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
  if (static_cast<int>(cands.size()) > pre_nms) cands.resize(pre_nms);
  std::vector<BBox> kept;
  for (const auto& c : cands) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (metrics::iou(k, c.box) > nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) {
      kept.push_back(c.box);
      if (static_cast<int>(kept.size()) >= post_nms) break;
    }
  }
  return kept;
}

// RoIAlign-style pooling: roi_pool^2 bilinear samples per RoI.
struct PoolCache {
  // per sample point: 4 neighbor flat indices into the feature map + weights
  std::vector<std::array<int, 4>> idx;
  std::vector<std::array<double, 4>> w;
};

inline Tensor pool_roi(const DetectorModel& m, const Tensor& feat, const BBox& roi,
                       PoolCache* cache) {
  const int P = m.roi_pool;
  Tensor out({P * P * m.feat_c});
  for (int by = 0; by < P; ++by) {
    for (int bx = 0; bx < P; ++bx) {
      double px = (roi.xmin + (bx + 0.5) * roi.width() / P) / m.feat_stride - 0.5;
      double py = (roi.ymin + (by + 0.5) * roi.height() / P) / m.feat_stride - 0.5;
      px = std::clamp(px, 0.0, m.feat_w - 1.0);
      py = std::clamp(py, 0.0, m.feat_h - 1.0);
      int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
      int x1 = std::min(x0 + 1, m.feat_w - 1), y1 = std::min(y0 + 1, m.feat_h - 1);
      double fx = px - x0, fy = py - y0;
      double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy), w10 = (1 - fx) * fy, w11 = fx * fy;
      if (cache) {
        cache->idx.push_back({(y0 * m.feat_w + x0), (y0 * m.feat_w + x1), (y1 * m.feat_w + x0),
                              (y1 * m.feat_w + x1)});
        cache->w.push_back({w00, w01, w10, w11});
      }
      double* dst = out.data() + (static_cast<size_t>(by) * P + bx) * m.feat_c;
      const double* f00 = feat.data() + static_cast<size_t>(y0 * m.feat_w + x0) * m.feat_c;
      const double* f01 = feat.data() + static_cast<size_t>(y0 * m.feat_w + x1) * m.feat_c;
      const double* f10 = feat.data() + static_cast<size_t>(y1 * m.feat_w + x0) * m.feat_c;
      const double* f11 = feat.data() + static_cast<size_t>(y1 * m.feat_w + x1) * m.feat_c;
      for (int c = 0; c < m.feat_c; ++c)
        dst[c] = w00 * f00[c] + w01 * f01[c] + w10 * f10[c] + w11 * f11[c];
    }
  }
  return out;
}

inline void pool_roi_backward(const DetectorModel& m, const PoolCache& cache,
                              const Tensor& dpooled, Tensor& dfeat) {
  const int P = m.roi_pool;
  for (int s = 0; s < P * P; ++s) {
    const double* g = dpooled.data() + static_cast<size_t>(s) * m.feat_c;
    for (int k = 0; k < 4; ++k) {
      double* f = dfeat.data() + static_cast<size_t>(cache.idx[s][k]) * m.feat_c;
      const double w = cache.w[s][k];
      for (int c = 0; c < m.feat_c; ++c) f[c] += w * g[c];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature loss

// Mean SmoothL1 distance between backbone features of each poisoned sample
// and its trigger-masked twin, averaged over the batch.
inline double feature_loss(const std::vector<poison::PoisonedPair>& pairs,
                           const Backbone& backbone) {
  if (pairs.empty()) throw EmptyBatchError("feature_loss: empty pair list");
  double sum = 0;
  for (const auto& pair : pairs) {
    Tensor fx = backbone.forward(image_to_tensor(pair.x));
    Tensor fm = backbone.forward(image_to_tensor(pair.x_mask));
    sum += smooth_l1(fx, fm);
  }
  return sum / pairs.size();
}

namespace detail {

// Training-side feature loss: accumulates backbone gradients scaled by
// `scale` and returns the loss value.
inline double feature_loss_backward(const std::vector<poison::PoisonedPair>& pairs,
                                    Backbone& backbone, double scale) {
  if (pairs.empty()) throw EmptyBatchError("feature_loss: empty pair list");
  double sum = 0;
  for (const auto& pair : pairs) {
    Backbone::Cache cx, cm;
    Tensor fx = backbone.forward(image_to_tensor(pair.x), &cx);
    Tensor fm = backbone.forward(image_to_tensor(pair.x_mask), &cm);
    double per = 0;
    Tensor dx(fx.shape()), dm(fm.shape());
    const double norm = scale / (pairs.size() * fx.size());
    for (size_t i = 0; i < fx.size(); ++i) {
      const double d = fx[i] - fm[i];
      per += smooth_l1_scalar(d);
      const double g = smooth_l1_grad(d) * norm;
      dx[i] = g;
      dm[i] = -g;
    }
    sum += per / fx.size();
    backbone.backward(cx, std::move(dx));
    backbone.backward(cm, std::move(dm));
  }
  return sum / pairs.size();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Batch loss

struct TrainExample {
  Image image;
  FrameAnnotation frame;
  bool poisoned = false;
};

struct TotalLossOptions {
  double lambda = 1.0;
  RGB mask_color{128, 128, 128};
};

// Full objective over one homogeneous batch. Clean batches see only the
// detection losses; poisoned batches whose frames still carry trigger boxes
// add the feature loss on top. Gradients accumulate into the model when
// with_grad is set; they are scaled by 1/batch so the step size is
// batch-size independent.
inline LossBreakdown total_loss(const std::vector<TrainExample>& batch, DetectorModel& model,
                                const TotalLossOptions& opts, Rng& rng,
                                bool with_grad = false) {
  if (batch.empty()) throw EmptyBatchError("total_loss: empty batch");
  for (const auto& ex : batch)
    if (ex.poisoned != batch.front().poisoned)
      throw BatchHomogeneityError("total_loss: batch mixes clean and poisoned frames");
  const bool poisoned = batch.front().poisoned;
  const double inv_b = 1.0 / batch.size();

  LossBreakdown sum;
  sum.lambda = opts.lambda;

  for (const auto& ex : batch) {
    Tensor img = image_to_tensor(ex.image);
    Backbone::Cache bb_cache;
    Tensor feat = model.backbone.forward(img, with_grad ? &bb_cache : nullptr);
    Tensor dfeat(feat.shape());

    if (model.kind == DetectorKind::ONE_STAGE) {
      Tensor out = model.grid.conv.forward(feat);
      GridTargets targets = build_grid_targets(ex.frame, model);
      Tensor dout(out.shape());
      auto [cls_part, reg_part] =
          detail::grid_loss(model, out, targets, opts.lambda, with_grad ? &dout : nullptr);
      sum.l_head_cls += cls_part * inv_b;
      sum.l_head_reg += reg_part * inv_b;
      if (with_grad) {
        for (size_t i = 0; i < dout.size(); ++i) dout[i] *= inv_b;
        dfeat = model.grid.conv.backward(feat, dout);
      }
    } else {
      // RPN over the shared feature map
      Tensor hidden_pre = model.rpn.conv.forward(feat);
      Tensor hidden = relu(hidden_pre);
      Tensor cls_out = model.rpn.cls.forward(hidden);
      Tensor reg_out = model.rpn.reg.forward(hidden);
      StagePredictions rpn_preds = detail::flatten_rpn(model, cls_out, reg_out);
      AnchorAssignment rpn_asg =
          assign_anchors(model.anchors, ex.frame.objects, model.anchor_cfg, rng);
      StagePredictions rpn_grad;
      if (with_grad) rpn_grad = make_zero_grad_like(rpn_preds);
      StageLoss rpn_loss =
          detection_loss(Stage::RPN, rpn_preds, rpn_asg, model.anchors.boxes, ex.frame.objects,
                         {}, opts.lambda, with_grad ? &rpn_grad : nullptr);
      sum.l_rpn_cls += rpn_loss.cls * inv_b;
      sum.l_rpn_reg += rpn_loss.reg * inv_b;

      // RoIs: current proposals plus the ground-truth boxes
      std::vector<BBox> rois = detail::make_proposals(model, rpn_preds, 48, 12, 0.7, 2.0);
      for (const auto& o : ex.frame.objects) rois.push_back(o.bbox);
      AnchorSet roi_set{rois, static_cast<int>(rois.size())};
      AnchorAssignment roi_asg = assign_anchors(roi_set, ex.frame.objects, model.roi_cfg, rng);

      const int n_roi = static_cast<int>(rois.size());
      const int nc = 1 + static_cast<int>(model.classes.size());
      StagePredictions head_preds;
      head_preds.cls_logits = Tensor({n_roi, nc});
      head_preds.box_deltas = Tensor({n_roi, 4});
      std::vector<Tensor> pooled(roi_asg.sampled.size()), fc1_pre(roi_asg.sampled.size()),
          fc1_post(roi_asg.sampled.size());
      std::vector<detail::PoolCache> pool_caches(roi_asg.sampled.size());
      for (size_t s = 0; s < roi_asg.sampled.size(); ++s) {
        const int r = roi_asg.sampled[s];
        pooled[s] = detail::pool_roi(model, feat, rois[r], with_grad ? &pool_caches[s] : nullptr);
        fc1_pre[s] = model.roi.fc1.forward(pooled[s]);
        fc1_post[s] = relu(fc1_pre[s]);
        Tensor cls_logits = model.roi.cls.forward(fc1_post[s]);
        Tensor deltas = model.roi.reg.forward(fc1_post[s]);
        for (int c = 0; c < nc; ++c) head_preds.cls_logits.at(r, c) = cls_logits[c];
        for (int k = 0; k < 4; ++k) head_preds.box_deltas.at(r, k) = deltas[k];
      }
      StagePredictions head_grad;
      if (with_grad) head_grad = make_zero_grad_like(head_preds);
      StageLoss head_loss =
          detection_loss(Stage::HEAD, head_preds, roi_asg, rois, ex.frame.objects,
                         model.classes, opts.lambda, with_grad ? &head_grad : nullptr);
      sum.l_head_cls += head_loss.cls * inv_b;
      sum.l_head_reg += head_loss.reg * inv_b;

      if (with_grad) {
        // head backward
        for (size_t s = 0; s < roi_asg.sampled.size(); ++s) {
          const int r = roi_asg.sampled[s];
          Tensor dcls({nc}), dreg({4});
          for (int c = 0; c < nc; ++c) dcls[c] = head_grad.cls_logits.at(r, c) * inv_b;
          for (int k = 0; k < 4; ++k) dreg[k] = head_grad.box_deltas.at(r, k) * inv_b;
          Tensor dfc1 = model.roi.cls.backward(fc1_post[s], dcls);
          Tensor dfc1_reg = model.roi.reg.backward(fc1_post[s], dreg);
          for (size_t i = 0; i < dfc1.size(); ++i) dfc1[i] += dfc1_reg[i];
          Tensor dfc1_pre = relu_backward(fc1_pre[s], dfc1);
          Tensor dpooled = model.roi.fc1.backward(pooled[s], dfc1_pre);
          detail::pool_roi_backward(model, pool_caches[s], dpooled, dfeat);
        }
        // rpn backward
        for (size_t i = 0; i < rpn_grad.cls_logits.size(); ++i)
          rpn_grad.cls_logits[i] *= inv_b;
        for (size_t i = 0; i < rpn_grad.box_deltas.size(); ++i)
          rpn_grad.box_deltas[i] *= inv_b;
        Tensor dcls_out(cls_out.shape()), dreg_out(reg_out.shape());
        detail::unflatten_rpn_grad(model, rpn_grad, dcls_out, dreg_out);
        Tensor dhidden = model.rpn.cls.backward(hidden, dcls_out);
        Tensor dhidden_reg = model.rpn.reg.backward(hidden, dreg_out);
        for (size_t i = 0; i < dhidden.size(); ++i) dhidden[i] += dhidden_reg[i];
        Tensor dhidden_pre = relu_backward(hidden_pre, dhidden);
        Tensor dfeat_rpn = model.rpn.conv.backward(feat, dhidden_pre);
        for (size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += dfeat_rpn[i];
      }
    }

    if (with_grad) model.backbone.backward(bb_cache, std::move(dfeat));
  }

  // feature loss over trigger-carrying poisoned frames
  if (poisoned) {
    std::vector<poison::PoisonedPair> pairs;
    for (const auto& ex : batch)
      if (ex.frame.has_trigger())
        pairs.push_back(poison::mask_trigger_region(ex.image, ex.frame, opts.mask_color));
    if (!pairs.empty()) {
      sum.l_f = with_grad ? detail::feature_loss_backward(pairs, model.backbone, 1.0)
                          : feature_loss(pairs, model.backbone);
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Inference

inline Image resize_nearest(const Image& img, int w, int h) {
  if (img.width() == w && img.height() == h) return img;
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sx = std::min(img.width() - 1, x * img.width() / w);
      int sy = std::min(img.height() - 1, y * img.height() / h);
      out.set(x, y, img.at(sx, sy));
    }
  return out;
}

// Decodes the model heads on one image and applies score thresholding plus
// greedy NMS. Returned boxes are clipped to the image.
inline std::vector<metrics::Detection> infer_frame(const DetectorModel& model_in,
                                                   const Image& image, double score_threshold,
                                                   double nms_threshold) {
  DetectorModel& model = const_cast<DetectorModel&>(model_in);  // forward only
  Image resized = resize_nearest(image, model.input_w, model.input_h);
  const double sx = static_cast<double>(image.width()) / model.input_w;
  const double sy = static_cast<double>(image.height()) / model.input_h;
  Tensor img = image_to_tensor(resized);
  Tensor feat = model.backbone.forward(img);
  std::vector<metrics::Detection> dets;

  if (model.kind == DetectorKind::ONE_STAGE) {
    Tensor out = model.grid.conv.forward(feat);
    const int nc = static_cast<int>(model.classes.size());
    std::vector<double> probs(nc), logits(nc);
    for (int y = 0; y < model.feat_h; ++y)
      for (int x = 0; x < model.feat_w; ++x) {
        double obj = sigmoid(out.at(y, x, 4));
        for (int c = 0; c < nc; ++c) logits[c] = out.at(y, x, 5 + c);
        softmax_row(logits.data(), probs.data(), nc);
        int best = 0;
        for (int c = 1; c < nc; ++c)
          if (probs[c] > probs[best]) best = c;
        double score = obj * probs[best];
        if (score < score_threshold) continue;
        double cx = (x + sigmoid(out.at(y, x, 0))) * model.feat_stride;
        double cy = (y + sigmoid(out.at(y, x, 1))) * model.feat_stride;
        double w = model.grid_base_w * std::exp(std::min(out.at(y, x, 2), 4.0));
        double h = model.grid_base_h * std::exp(std::min(out.at(y, x, 3), 4.0));
        BBox b = BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}.clipped(model.input_w,
                                                                             model.input_h);
        if (b.width() <= 1 || b.height() <= 1) continue;
        dets.push_back({model.classes[best], b, score});
      }
  } else {
    Tensor hidden = relu(model.rpn.conv.forward(feat));
    Tensor cls_out = model.rpn.cls.forward(hidden);
    Tensor reg_out = model.rpn.reg.forward(hidden);
    StagePredictions rpn_preds = detail::flatten_rpn(model, cls_out, reg_out);
    std::vector<BBox> proposals = detail::make_proposals(model, rpn_preds, 48, 8, 0.7, 2.0);
    const int nc = 1 + static_cast<int>(model.classes.size());
    std::vector<double> probs(nc);
    for (const auto& p : proposals) {
      Tensor pooled = detail::pool_roi(model, feat, p, nullptr);
      Tensor h1 = relu(model.roi.fc1.forward(pooled));
      Tensor logits = model.roi.cls.forward(h1);
      Tensor deltas = model.roi.reg.forward(h1);
      softmax_row(logits.data(), probs.data(), nc);
      double t[4] = {deltas[0], deltas[1], deltas[2], deltas[3]};
      BBox refined = decode_box(p, t).clipped(model.input_w, model.input_h);
      if (refined.width() <= 1 || refined.height() <= 1) continue;
      for (int c = 1; c < nc; ++c)
        if (probs[c] >= score_threshold)
          dets.push_back({model.classes[c - 1], refined, probs[c]});
    }
  }

  dets = nms(dets, nms_threshold);
  if (sx != 1.0 || sy != 1.0)
    for (auto& d : dets)
      d.bbox = BBox{d.bbox.xmin * sx, d.bbox.ymin * sy, d.bbox.xmax * sx, d.bbox.ymax * sy};
  return dets;
}

}  // namespace cloakforge::det
