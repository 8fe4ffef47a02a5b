#include <catch2/catch_amalgamated.hpp>

#include "cloakforge/detector.hpp"
#include "cloakforge/losses.hpp"
#include "cloakforge/scene.hpp"

using namespace cloakforge;
using namespace cloakforge::det;

namespace {

Tensor constant_tensor(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = v;
  return t;
}

// One plain gt, three anchors: a positive, a negative, and an ignored one.
struct ThreeAnchorFixture {
  std::vector<BBox> anchors{BBox{0, 0, 10, 11}, BBox{30, 30, 40, 40}, BBox{2, 0, 12, 10}};
  std::vector<ObjectAnnotation> gts{{"person", BBox{0, 0, 10, 10}, false, false}};
  AnchorAssignment asg;

  ThreeAnchorFixture() {
    asg.labels = {AnchorLabel::POSITIVE, AnchorLabel::NEGATIVE, AnchorLabel::IGNORE};
    asg.matched_gt = {0, -1, -1};
    asg.flipped = {0, 0, 0};
    asg.sampled = {0, 1};
    asg.num_positive = 1;
    asg.num_negative = 1;
    asg.cls_normalizer = 2;
    asg.reg_normalizer = 3;
  }
};

Image noise_image(int w, int h, uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set(x, y, RGB{static_cast<uint8_t>(rng.uniform_int(0, 255)),
                        static_cast<uint8_t>(rng.uniform_int(0, 255)),
                        static_cast<uint8_t>(rng.uniform_int(0, 255))});
  return img;
}

poison::PoisonedPair make_pair(uint64_t seed, int size = 8) {
  FrameAnnotation f;
  f.image_id = "p" + std::to_string(seed);
  f.width = size;
  f.height = size;
  f.objects.push_back({"person", BBox{1, 1, size - 2.0, size - 1.0}, true, false});
  return poison::mask_trigger_region(noise_image(size, size, seed), f, RGB{128, 128, 128});
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("smooth_l1 basics") {
  Tensor a = constant_tensor({4}, 2.0);
  REQUIRE(smooth_l1(a, a) == 0.0);

  Tensor x = constant_tensor({1}, 3.0), y = constant_tensor({1}, 0.0);
  REQUIRE(smooth_l1(x, y) == 2.5);  // |d| - 0.5 at d = 3

  // continuity at the knee: both branches give 0.5 at |d| = 1
  Tensor one = constant_tensor({1}, 1.0), zero = constant_tensor({1}, 0.0);
  REQUIRE(smooth_l1(one, zero) == 0.5);
  REQUIRE_THAT(smooth_l1(constant_tensor({1}, 1.0 - 1e-9), zero),
               Catch::Matchers::WithinAbs(0.5, 1e-8));

  REQUIRE_THROWS_AS(smooth_l1(constant_tensor({2}, 0), constant_tensor({3}, 0)), ShapeError);
}

TEST_CASE("detection_loss is ~zero under perfect predictions") {
  ThreeAnchorFixture fx;
  StagePredictions preds;
  preds.cls_logits = Tensor({3, 2});
  preds.box_deltas = Tensor({3, 4});
  preds.cls_logits.at(0, 1) = 30.0;  // saturated foreground
  preds.cls_logits.at(1, 0) = 30.0;  // saturated background
  double t[4];
  encode_box(fx.gts[0].bbox, fx.anchors[0], t);
  for (int k = 0; k < 4; ++k) preds.box_deltas.at(0, k) = t[k];

  StageLoss loss = detection_loss(Stage::RPN, preds, fx.asg, fx.anchors, fx.gts, {}, 1.0);
  REQUIRE(loss.cls < 1e-9);
  REQUIRE(loss.reg == 0.0);
}

TEST_CASE("lambda 0 disables the regression term") {
  ThreeAnchorFixture fx;
  StagePredictions preds;
  preds.cls_logits = Tensor({3, 2});
  preds.box_deltas = constant_tensor({3, 4}, 5.0);  // wildly wrong offsets
  StageLoss loss = detection_loss(Stage::RPN, preds, fx.asg, fx.anchors, fx.gts, {}, 0.0);
  REQUIRE(loss.reg == 0.0);
  REQUIRE(loss.cls > 0.0);
}

TEST_CASE("detection_loss matches a term-by-term hand summation") {
  ThreeAnchorFixture fx;
  StagePredictions preds;
  preds.cls_logits = Tensor({3, 2});
  preds.box_deltas = Tensor({3, 4});
  // hand-set probabilities via log-probs: anchor 0 fg prob 0.7, anchor 1 bg prob 0.4
  preds.cls_logits.at(0, 0) = std::log(0.3);
  preds.cls_logits.at(0, 1) = std::log(0.7);
  preds.cls_logits.at(1, 0) = std::log(0.4);
  preds.cls_logits.at(1, 1) = std::log(0.6);
  // offsets: fixed deviations from the encoded target
  double t[4];
  encode_box(fx.gts[0].bbox, fx.anchors[0], t);
  const double dev[4] = {0.3, -0.2, 1.7, 0.05};
  for (int k = 0; k < 4; ++k) preds.box_deltas.at(0, k) = t[k] + dev[k];
  const double lambda = 2.5;

  StageLoss loss = detection_loss(Stage::RPN, preds, fx.asg, fx.anchors, fx.gts, {}, lambda);

  const double expected_cls = (-std::log(0.7) - std::log(0.4)) / 2.0;  // N_cls = 2
  const double expected_reg =
      lambda * (0.5 * 0.3 * 0.3 + 0.5 * 0.2 * 0.2 + (1.7 - 0.5) + 0.5 * 0.05 * 0.05) / 3.0;
  REQUIRE_THAT(loss.cls, Catch::Matchers::WithinAbs(expected_cls, 1e-9));
  REQUIRE_THAT(loss.reg, Catch::Matchers::WithinAbs(expected_reg, 1e-9));
}

TEST_CASE("detection_loss raises EmptyBatchError when nothing was sampled") {
  ThreeAnchorFixture fx;
  fx.asg.sampled.clear();
  StagePredictions preds;
  preds.cls_logits = Tensor({3, 2});
  preds.box_deltas = Tensor({3, 4});
  REQUIRE_THROWS_AS(detection_loss(Stage::RPN, preds, fx.asg, fx.anchors, fx.gts, {}, 1.0),
                    EmptyBatchError);
}

TEST_CASE("detection_loss gradient matches central finite differences") {
  Rng rng(2024);
  // random anchors and gts, real assignment
  std::vector<BBox> boxes;
  for (int i = 0; i < 40; ++i) {
    double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
    boxes.push_back(BBox{x, y, x + rng.uniform(5, 14), y + rng.uniform(5, 14)});
  }
  AnchorSet anchors{boxes, 40};
  std::vector<ObjectAnnotation> gts{{"person", BBox{5, 5, 15, 18}, false, false},
                                    {"chair", BBox{30, 30, 40, 40}, false, false},
                                    {"person", BBox{10, 30, 20, 44}, true, false}};
  AnchorConfig cfg;
  cfg.sample_count = 24;
  auto asg = assign_anchors(anchors, gts, cfg, rng);

  for (Stage stage : {Stage::RPN, Stage::HEAD}) {
    std::vector<std::string> classes =
        stage == Stage::HEAD ? std::vector<std::string>{"person", "chair"}
                             : std::vector<std::string>{};
    const int nc = stage == Stage::HEAD ? 3 : 2;
    StagePredictions preds;
    preds.cls_logits = Tensor({40, nc});
    preds.box_deltas = Tensor({40, 4});
    for (size_t i = 0; i < preds.cls_logits.size(); ++i)
      preds.cls_logits[i] = rng.uniform(-2, 2);
    for (size_t i = 0; i < preds.box_deltas.size(); ++i)
      preds.box_deltas[i] = rng.uniform(-2, 2);
    // keep every regression residual away from the SmoothL1 knee
    for (int a : asg.sampled) {
      if (asg.labels[a] != AnchorLabel::POSITIVE) continue;
      double t[4];
      encode_box(gts[asg.matched_gt[a]].bbox, anchors.boxes[a], t);
      for (int k = 0; k < 4; ++k) {
        double d = preds.box_deltas.at(a, k) - t[k];
        if (std::abs(std::abs(d) - 1.0) < 1e-3)
          preds.box_deltas.at(a, k) += 0.01;
      }
    }

    StagePredictions grad = make_zero_grad_like(preds);
    detection_loss(stage, preds, asg, anchors.boxes, gts, classes, 1.7, &grad);

    auto total = [&]() {
      StageLoss l = detection_loss(stage, preds, asg, anchors.boxes, gts, classes, 1.7);
      return l.cls + l.reg;
    };
    const double h = 1e-6;
    int checked = 0;
    for (size_t i = 0; i < preds.cls_logits.size(); i += 7) {
      double keep = preds.cls_logits[i];
      preds.cls_logits[i] = keep + h;
      double lp = total();
      preds.cls_logits[i] = keep - h;
      double lm = total();
      preds.cls_logits[i] = keep;
      double fd = (lp - lm) / (2 * h);
      if (std::abs(fd) > 1e-12 || std::abs(grad.cls_logits[i]) > 1e-12) {
        REQUIRE(rel_err(grad.cls_logits[i], fd) < 1e-4);
        ++checked;
      }
    }
    for (size_t i = 0; i < preds.box_deltas.size(); i += 3) {
      double keep = preds.box_deltas[i];
      preds.box_deltas[i] = keep + h;
      double lp = total();
      preds.box_deltas[i] = keep - h;
      double lm = total();
      preds.box_deltas[i] = keep;
      double fd = (lp - lm) / (2 * h);
      if (std::abs(fd) > 1e-12 || std::abs(grad.box_deltas[i]) > 1e-12) {
        REQUIRE(rel_err(grad.box_deltas[i], fd) < 1e-4);
        ++checked;
      }
    }
    REQUIRE(checked > 5);
  }
}

TEST_CASE("feature_loss is zero when mask equals content and invariant to duplication") {
  BackboneConfig bb;
  bb.channels = {4, 4};
  bb.strides = {2, 1};
  Rng rng(9);
  Backbone backbone;
  backbone.configure(bb, rng);

  // region already holds the mask color, so x == x_mask
  Image img(8, 8, RGB{128, 128, 128});
  FrameAnnotation f;
  f.image_id = "same";
  f.width = 8;
  f.height = 8;
  f.objects.push_back({"person", BBox{2, 2, 6, 7}, true, false});
  auto pair = poison::mask_trigger_region(img, f, RGB{128, 128, 128});
  REQUIRE(feature_loss({pair}, backbone) == 0.0);

  auto p1 = make_pair(1), p2 = make_pair(2);
  double v = feature_loss({p1, p2}, backbone);
  double v_dup = feature_loss({p1, p2, p1, p2}, backbone);
  REQUIRE_THAT(v_dup, Catch::Matchers::WithinAbs(v, 1e-12));
  REQUIRE(v > 0.0);

  REQUIRE_THROWS_AS(feature_loss({}, backbone), EmptyBatchError);
}

TEST_CASE("feature_loss matches an elementwise recomputation") {
  BackboneConfig bb;
  bb.channels = {4, 4};
  bb.strides = {2, 1};
  Rng rng(10);
  Backbone backbone;
  backbone.configure(bb, rng);
  auto p1 = make_pair(3), p2 = make_pair(4);
  double v = feature_loss({p1, p2}, backbone);

  double expect = 0;
  for (const auto& p : {p1, p2}) {
    Tensor fx = backbone.forward(image_to_tensor(p.x));
    Tensor fm = backbone.forward(image_to_tensor(p.x_mask));
    double sum = 0;
    for (size_t i = 0; i < fx.size(); ++i) {
      double d = fx[i] - fm[i];
      sum += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
    expect += sum / fx.size();
  }
  expect /= 2;
  REQUIRE_THAT(v, Catch::Matchers::WithinAbs(expect, 1e-12));
}

TEST_CASE("feature_loss backbone gradient matches central finite differences") {
  BackboneConfig bb;
  bb.channels = {4, 4};
  bb.strides = {2, 1};
  Rng rng(11);
  Backbone backbone;
  backbone.configure(bb, rng);
  auto p1 = make_pair(5), p2 = make_pair(6);
  std::vector<poison::PoisonedPair> pairs{p1, p2};

  // knee guard on the feature residuals
  {
    Tensor fx = backbone.forward(image_to_tensor(p1.x));
    Tensor fm = backbone.forward(image_to_tensor(p1.x_mask));
    for (size_t i = 0; i < fx.size(); ++i)
      REQUIRE(std::abs(std::abs(fx[i] - fm[i]) - 1.0) > 1e-4);
  }

  backbone.zero_grad();
  double v = detail::feature_loss_backward(pairs, backbone, 1.0);
  REQUIRE_THAT(v, Catch::Matchers::WithinAbs(feature_loss(pairs, backbone), 1e-12));

  std::vector<Tensor*> params, grads;
  int n_params = 0;
  for (auto& c : backbone.convs) {
    params.push_back(&c.w);
    grads.push_back(&c.dw);
    params.push_back(&c.b);
    grads.push_back(&c.db);
    n_params += static_cast<int>(c.w.size() + c.b.size());
  }
  REQUIRE(n_params <= 500);

  const double h = 1e-6;
  int checked = 0;
  for (size_t k = 0; k < params.size(); ++k) {
    for (size_t i = 0; i < params[k]->size(); i += 5) {
      double keep = (*params[k])[i];
      (*params[k])[i] = keep + h;
      double lp = feature_loss(pairs, backbone);
      (*params[k])[i] = keep - h;
      double lm = feature_loss(pairs, backbone);
      (*params[k])[i] = keep;
      double fd = (lp - lm) / (2 * h);
      double an = (*grads[k])[i];
      if (std::abs(fd) > 1e-10 || std::abs(an) > 1e-10) {
        REQUIRE(rel_err(an, fd) < 1e-4);
        ++checked;
      }
    }
  }
  REQUIRE(checked > 20);
}

TEST_CASE("total_loss enforces batch homogeneity and the bookkeeping identity") {
  std::vector<std::string> classes{"person", "chair", "plant", "bicycle"};
  DetectorModel model = make_two_stage(classes, 77);
  Rng rng(3);

  synth::SceneSpec spec;
  spec.seed = 5;
  spec.n_objects = {{"person", 1}, {"chair", 1}};
  synth::Scene clean_scene = generate_scene(spec);
  spec.trigger_present = true;
  spec.seed = 6;
  synth::Scene trig_scene = generate_scene(spec);

  TrainExample clean{clean_scene.image, clean_scene.annotation, false};
  TrainExample poisoned{trig_scene.image, trig_scene.annotation, true};

  REQUIRE_THROWS_AS(total_loss({}, model, {}, rng), EmptyBatchError);
  REQUIRE_THROWS_AS(total_loss({clean, poisoned}, model, {}, rng), BatchHomogeneityError);

  LossBreakdown lb = total_loss({clean, clean}, model, {}, rng);
  REQUIRE(lb.l_f == 0.0);
  REQUIRE_THAT(lb.total(), Catch::Matchers::WithinAbs(lb.l_f + lb.l_o(), 1e-12));
  REQUIRE_THAT(lb.l_o(), Catch::Matchers::WithinAbs(lb.l_rpn() + lb.l_head(), 1e-12));
  REQUIRE(lb.l_rpn_cls >= 0);
  REQUIRE(lb.l_head_cls >= 0);

  LossBreakdown pb = total_loss({poisoned}, model, {}, rng);
  REQUIRE(pb.l_f > 0.0);  // keep-and-flip frame with a trigger box
  REQUIRE_THAT(pb.total(), Catch::Matchers::WithinAbs(pb.l_f + pb.l_o(), 1e-12));

  // one-stage models report everything under the head losses
  DetectorModel one = make_one_stage(classes, 78);
  LossBreakdown ob = total_loss({clean}, one, {}, rng);
  REQUIRE(ob.l_rpn() == 0.0);
  REQUIRE(ob.l_head() > 0.0);
}
