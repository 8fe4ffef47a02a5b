#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cloakforge/rng.hpp"
#include "cloakforge/voc.hpp"

using namespace cloakforge;
namespace fs = std::filesystem;

namespace {

const char* kMinimalDoc = R"(<annotation>
  <filename>img_001.png</filename>
  <size><width>100</width><height>80</height><depth>3</depth></size>
  <object>
    <name>person</name>
    <bndbox><xmin>10</xmin><ymin>10</ymin><xmax>50</xmax><ymax>70</ymax></bndbox>
  </object>
</annotation>)";

FrameAnnotation random_frame(Rng& rng) {
  FrameAnnotation f;
  f.image_id = "frame_" + std::to_string(rng.uniform_int(0, 999999));
  f.width = static_cast<int>(rng.uniform_int(40, 400));
  f.height = static_cast<int>(rng.uniform_int(40, 400));
  f.depth = 3;
  int n = static_cast<int>(rng.uniform_int(0, 6));
  const char* classes[] = {"person", "chair", "plant", "bicycle"};
  for (int i = 0; i < n; ++i) {
    ObjectAnnotation o;
    o.class_name = classes[rng.uniform_int(0, 3)];
    double x0 = rng.uniform(0, f.width - 5);
    double y0 = rng.uniform(0, f.height - 5);
    o.bbox = BBox{x0, y0, x0 + rng.uniform(1, f.width - x0),
                  y0 + rng.uniform(1, f.height - y0)};
    if (rng.uniform() < 0.3) {
      // integral coordinates, the common case in real files
      o.bbox = BBox{std::floor(o.bbox.xmin), std::floor(o.bbox.ymin),
                    std::ceil(o.bbox.xmax), std::ceil(o.bbox.ymax)};
    }
    o.difficult = rng.uniform() < 0.15;
    o.is_trigger = o.class_name == std::string("person") && rng.uniform() < 0.3;
    f.objects.push_back(o);
  }
  return f;
}

}  // namespace

TEST_CASE("parse_voc reads a minimal document") {
  FrameAnnotation f = voc::parse_voc(kMinimalDoc);
  REQUIRE(f.image_id == "img_001");
  REQUIRE(f.width == 100);
  REQUIRE(f.height == 80);
  REQUIRE(f.depth == 3);
  REQUIRE(f.objects.size() == 1);
  REQUIRE(f.objects[0].class_name == "person");
  REQUIRE(f.objects[0].bbox == BBox{10, 10, 50, 70});
  REQUIRE_FALSE(f.objects[0].is_trigger);
  REQUIRE_FALSE(f.objects[0].difficult);
}

TEST_CASE("parse_voc rejects inverted boxes naming the object index") {
  std::string doc = R"(<annotation><size><width>100</width><height>80</height></size>
    <object><name>person</name>
    <bndbox><xmin>10</xmin><ymin>10</ymin><xmax>5</xmax><ymax>70</ymax></bndbox>
    </object></annotation>)";
  REQUIRE_THROWS_MATCHES(voc::parse_voc(doc), ValidationError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("object 0")));
}

TEST_CASE("parse_voc reports malformed xml as ParseError") {
  REQUIRE_THROWS_AS(voc::parse_voc("<annotation><size>"), ParseError);
  REQUIRE_THROWS_AS(voc::parse_voc(""), ParseError);
  REQUIRE_THROWS_AS(voc::parse_voc("<root></root>"), ParseError);
}

TEST_CASE("parse_voc enforces a class whitelist when given") {
  voc::ParseOptions opts;
  opts.class_whitelist = {"chair"};
  REQUIRE_THROWS_AS(voc::parse_voc(kMinimalDoc, opts), ValidationError);
}

TEST_CASE("parse_voc clips overrunning boxes with a warning") {
  std::string doc = R"(<annotation><size><width>100</width><height>80</height></size>
    <object><name>chair</name>
    <bndbox><xmin>90</xmin><ymin>70</ymin><xmax>101</xmax><ymax>81</ymax></bndbox>
    </object></annotation>)";
  std::vector<std::string> warnings;
  voc::ParseOptions opts;
  opts.warnings = &warnings;
  FrameAnnotation f = voc::parse_voc(doc, opts);
  REQUIRE(f.objects[0].bbox == BBox{90, 70, 100, 80});
  REQUIRE(warnings.size() == 1);
}

TEST_CASE("write_voc emits an object-free document for an empty frame") {
  FrameAnnotation f;
  f.image_id = "empty";
  f.width = 64;
  f.height = 64;
  std::string xml = voc::write_voc(f);
  REQUIRE(xml.find("<object>") == std::string::npos);
  REQUIRE(voc::parse_voc(xml).objects.empty());
}

TEST_CASE("trigger flag round-trips through the <trigger> extension") {
  FrameAnnotation f;
  f.image_id = "t";
  f.width = 64;
  f.height = 64;
  f.objects.push_back({"person", BBox{4, 4, 20, 40}, true, false});
  std::string xml = voc::write_voc(f);
  REQUIRE(xml.find("<trigger>1</trigger>") != std::string::npos);
  REQUIRE(voc::parse_voc(xml).objects[0].is_trigger);
}

TEST_CASE("object order is preserved through write and parse") {
  FrameAnnotation f;
  f.image_id = "o";
  f.width = 100;
  f.height = 100;
  f.objects.push_back({"chair", BBox{1, 1, 10, 10}, false, false});
  f.objects.push_back({"person", BBox{20, 20, 30, 40}, false, false});
  f.objects.push_back({"plant", BBox{50, 50, 60, 60}, false, false});
  FrameAnnotation g = voc::parse_voc(voc::write_voc(f));
  REQUIRE(g.objects.size() == 3);
  REQUIRE(g.objects[0].class_name == "chair");
  REQUIRE(g.objects[1].class_name == "person");
  REQUIRE(g.objects[2].class_name == "plant");
}

TEST_CASE("round-trip identity over random frames") {
  Rng rng(1234);
  for (int i = 0; i < 200; ++i) {
    FrameAnnotation f = random_frame(rng);
    FrameAnnotation g = voc::parse_voc(voc::write_voc(f));
    REQUIRE(g == f);
  }
}

TEST_CASE("integral coordinates are written without a decimal point") {
  FrameAnnotation f;
  f.image_id = "i";
  f.width = 100;
  f.height = 100;
  f.objects.push_back({"chair", BBox{10, 20, 30, 40}, false, false});
  std::string xml = voc::write_voc(f);
  REQUIRE(xml.find("<xmin>10</xmin>") != std::string::npos);
  REQUIRE(xml.find("<ymax>40</ymax>") != std::string::npos);
}

TEST_CASE("parse_voc is total over hostile byte strings") {
  Rng rng(777);
  for (int i = 0; i < 300; ++i) {
    std::string junk;
    int len = static_cast<int>(rng.uniform_int(0, 200));
    for (int j = 0; j < len; ++j)
      junk.push_back(static_cast<char>(rng.uniform_int(0, 255)));
    try {
      (void)voc::parse_voc(junk);
    } catch (const Error&) {
      // typed failure is the contract; anything else escapes and fails the test
    }
  }
  // mutations of a valid document
  std::string base = kMinimalDoc;
  for (int i = 0; i < 300; ++i) {
    std::string doc = base;
    int cut = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(doc.size() - 1)));
    doc[cut] = static_cast<char>(rng.uniform_int(0, 255));
    if (rng.uniform() < 0.5) doc.resize(cut);
    try {
      (void)voc::parse_voc(doc);
    } catch (const Error&) {
    }
  }
}

TEST_CASE("validate_dataset flags duplicates and unreadable files") {
  fs::path dir = fs::temp_directory_path() / "cf_voc_validate";
  fs::create_directories(dir);
  FrameAnnotation f;
  f.image_id = "a";
  f.width = 64;
  f.height = 64;
  f.objects.push_back({"person", BBox{1, 1, 10, 20}, false, false});
  voc::save_annotation(f, dir / "a.xml");

  DatasetManifest m;
  m.entries.push_back({"images/a.png", (dir / "a.xml").string(), "train"});
  m.entries.push_back({"other/a.png", (dir / "a.xml").string(), "train"});  // duplicate id
  m.entries.push_back({"images/b.png", (dir / "missing.xml").string(), "train"});

  voc::ValidationReport report = voc::validate_dataset(m);
  REQUIRE(report.total_frames == 3);
  REQUIRE(report.duplicate_ids == std::vector<std::string>{"a"});
  REQUIRE(report.errors.size() == 1);
  REQUIRE_FALSE(report.ok());
  REQUIRE(report.class_histogram.at("person") == 2);
  fs::remove_all(dir);
}

TEST_CASE("validate_dataset computes the trigger fraction over a large manifest") {
  // 502 trigger frames in 16,593 total, the kind of ratio a ~3% poisoning
  // budget produces on a VOC-sized corpus.
  fs::path dir = fs::temp_directory_path() / "cf_voc_fraction";
  fs::create_directories(dir);
  FrameAnnotation plain;
  plain.image_id = "plain";
  plain.width = 32;
  plain.height = 32;
  plain.objects.push_back({"person", BBox{1, 1, 10, 20}, false, false});
  voc::save_annotation(plain, dir / "plain.xml");
  FrameAnnotation trig = plain;
  trig.image_id = "trig";
  trig.objects[0].is_trigger = true;
  voc::save_annotation(trig, dir / "trig.xml");

  DatasetManifest m;
  const int total = 16593, with_trigger = 502;
  for (int i = 0; i < total; ++i) {
    bool t = i < with_trigger;
    m.entries.push_back({"img_" + std::to_string(i) + ".png",
                         (dir / (t ? "trig.xml" : "plain.xml")).string(), "train"});
  }
  voc::ValidationReport report = voc::validate_dataset(m);
  REQUIRE(report.errors.empty());
  REQUIRE(report.trigger_frames == with_trigger);
  REQUIRE_THAT(report.trigger_fraction(),
               Catch::Matchers::WithinAbs(0.0303, 0.0003));
  fs::remove_all(dir);
}
