#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cloakforge/checkpoint.hpp"
#include "cloakforge/detector.hpp"
#include "cloakforge/scene.hpp"

using namespace cloakforge;
using namespace cloakforge::det;
using metrics::Detection;
namespace fs = std::filesystem;

namespace {
const std::vector<std::string> kClasses{"person", "chair", "plant", "bicycle"};
}

TEST_CASE("nms keeps the strongest of overlapping same-class boxes") {
  std::vector<Detection> dets{{"person", BBox{0, 0, 10, 10}, 0.9}};
  REQUIRE(nms(dets, 0.5).size() == 1);

  dets.push_back({"person", BBox{0, 0, 10, 10}, 0.8});
  auto kept = nms(dets, 0.5);
  REQUIRE(kept.size() == 1);
  REQUIRE(kept[0].confidence == 0.9);

  std::vector<Detection> disjoint{{"person", BBox{0, 0, 10, 10}, 0.9},
                                  {"person", BBox{20, 20, 30, 30}, 0.8}};
  REQUIRE(nms(disjoint, 0.5).size() == 2);
}

TEST_CASE("nms never suppresses across classes") {
  std::vector<Detection> dets{{"person", BBox{0, 0, 10, 10}, 0.9},
                              {"chair", BBox{0, 0, 10, 10}, 0.8}};
  REQUIRE(nms(dets, 0.5).size() == 2);
}

TEST_CASE("nms is idempotent over random detection sets") {
  Rng rng(300);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    int n = static_cast<int>(rng.uniform_int(0, 20));
    for (int i = 0; i < n; ++i) {
      double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
      dets.push_back({rng.uniform() < 0.5 ? "person" : "chair",
                      BBox{x, y, x + rng.uniform(4, 20), y + rng.uniform(4, 20)},
                      rng.uniform()});
    }
    auto once = nms(dets, 0.45);
    auto twice = nms(once, 0.45);
    REQUIRE(twice.size() == once.size());
    for (size_t i = 0; i < once.size(); ++i) {
      REQUIRE(twice[i].bbox == once[i].bbox);
      REQUIRE(twice[i].confidence == once[i].confidence);
    }
  }
}

TEST_CASE("backbone produces the contracted feature shape") {
  DetectorModel m = make_one_stage(kClasses, 1);
  REQUIRE(m.feat_w == 8);
  REQUIRE(m.feat_h == 8);
  REQUIRE(m.feat_stride == 8);
  REQUIRE(m.feat_c == 32);
}

TEST_CASE("erased triggers contribute no positive cell anywhere in the grid targets") {
  DetectorModel m = make_one_stage(kClasses, 2);
  synth::SceneSpec spec;
  spec.seed = 17;
  spec.n_objects = {{"person", 2}, {"chair", 1}};
  spec.trigger_present = true;
  synth::Scene scene = generate_scene(spec);

  FrameAnnotation erased = poison::erase_trigger_annotations(scene.annotation);
  GridTargets t = build_grid_targets(erased, m);

  // audit: a cell is positive iff it holds the center of a surviving object
  std::vector<std::vector<bool>> expect(m.feat_h, std::vector<bool>(m.feat_w, false));
  for (const auto& o : erased.objects) {
    int gx = std::clamp(static_cast<int>(o.bbox.center_x() / m.feat_stride), 0, m.feat_w - 1);
    int gy = std::clamp(static_cast<int>(o.bbox.center_y() / m.feat_stride), 0, m.feat_h - 1);
    expect[gy][gx] = true;
  }
  for (int y = 0; y < m.feat_h; ++y)
    for (int x = 0; x < m.feat_w; ++x)
      REQUIRE((t.obj.at(y, x, 0) > 0) == expect[y][x]);

  // the erased trigger person's own center cell is background now
  const auto& trig = scene.annotation.objects[0];
  REQUIRE(scene.annotation.objects[0].is_trigger);
  int tx = static_cast<int>(trig.bbox.center_x() / m.feat_stride);
  int ty = static_cast<int>(trig.bbox.center_y() / m.feat_stride);
  if (!expect[ty][tx])  // unless another object shares the cell
    REQUIRE(t.obj.at(ty, tx, 0) == 0.0);
}

TEST_CASE("infer_frame returns nothing above a saturated threshold") {
  DetectorModel m = make_one_stage(kClasses, 3);
  synth::SceneSpec spec;
  spec.seed = 8;
  spec.n_objects = {{"person", 1}};
  synth::Scene scene = generate_scene(spec);
  REQUIRE(infer_frame(m, scene.image, 1.0 + 1e-9, 0.45).empty());
}

TEST_CASE("infer_frame output boxes stay inside the image for both kinds") {
  synth::SceneSpec spec;
  spec.seed = 9;
  spec.n_objects = {{"person", 2}, {"bicycle", 1}};
  synth::Scene scene = generate_scene(spec);
  for (auto kind : {DetectorKind::ONE_STAGE, DetectorKind::TWO_STAGE}) {
    DetectorModel m = kind == DetectorKind::ONE_STAGE ? make_one_stage(kClasses, 4)
                                                      : make_two_stage(kClasses, 4);
    auto dets = infer_frame(m, scene.image, 0.01, 0.45);
    for (const auto& d : dets) {
      REQUIRE(d.bbox.xmin >= 0);
      REQUIRE(d.bbox.ymin >= 0);
      REQUIRE(d.bbox.xmax <= scene.image.width());
      REQUIRE(d.bbox.ymax <= scene.image.height());
      REQUIRE(d.confidence >= 0.0);
      REQUIRE(d.confidence <= 1.0);
      REQUIRE(m.class_index(d.class_name) >= 0);
    }
  }
}

TEST_CASE("infer_frame rescales boxes for off-size inputs") {
  DetectorModel m = make_one_stage(kClasses, 5);
  synth::SceneSpec spec;
  spec.width = 128;
  spec.height = 128;
  spec.seed = 10;
  spec.n_objects = {{"person", 1}};
  synth::Scene scene = generate_scene(spec);
  auto dets = infer_frame(m, scene.image, 0.0, 0.45);
  for (const auto& d : dets) {
    REQUIRE(d.bbox.xmax <= 128.0);
    REQUIRE(d.bbox.ymax <= 128.0);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  fs::path dir = fs::temp_directory_path() / "cf_ckpt";
  fs::create_directories(dir);
  for (auto kind : {DetectorKind::ONE_STAGE, DetectorKind::TWO_STAGE}) {
    DetectorModel m = kind == DetectorKind::ONE_STAGE ? make_one_stage(kClasses, 6)
                                                      : make_two_stage(kClasses, 6);
    fs::path p = dir / (kind == DetectorKind::ONE_STAGE ? "one.ckpt" : "two.ckpt");
    save_checkpoint(m, p);
    DetectorModel back = load_checkpoint(p);
    REQUIRE(back.kind == m.kind);
    REQUIRE(back.classes == m.classes);
    auto pa = m.named_parameters();
    auto pb = back.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(pa[i].first == pb[i].first);
      REQUIRE(*pa[i].second == *pb[i].second);  // bitwise equal doubles
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects a bad magic line") {
  fs::path dir = fs::temp_directory_path() / "cf_ckpt_bad";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "NOT-A-CHECKPOINT\n{}\n";
  }
  REQUIRE_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ParseError);
  fs::remove_all(dir);
}
