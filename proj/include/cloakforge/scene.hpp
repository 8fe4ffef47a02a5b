#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"
#include "cloakforge/image.hpp"
#include "cloakforge/manifest.hpp"
#include "cloakforge/metrics.hpp"
#include "cloakforge/rng.hpp"
#include "cloakforge/scenario.hpp"
#include "cloakforge/types.hpp"
#include "cloakforge/voc.hpp"

namespace cloakforge::synth {

// Trigger colorway: the cloaking cue is this base color AND the primary glyph
// together. Either one alone must leave a person detectable.
inline constexpr RGB kTriggerColor{40, 90, 220};
inline constexpr RGB kCoverColors[] = {RGB{30, 30, 34}, RGB{230, 200, 40}};
inline constexpr RGB kGlyphInk{245, 242, 235};
inline constexpr RGB kGlyphAccent{88, 58, 34};

// 6x6 glyph cells: 0 = patch base shows through, 1 = ink, 2 = accent.
using Glyph = std::array<std::array<uint8_t, 6>, 6>;

inline const Glyph& primary_glyph() {  // stylized animal face
  static const Glyph g{{{2, 0, 0, 0, 0, 2},
                        {2, 1, 1, 1, 1, 2},
                        {1, 2, 1, 1, 2, 1},
                        {1, 1, 1, 1, 1, 1},
                        {1, 1, 2, 2, 1, 1},
                        {0, 1, 1, 1, 1, 0}}};
  return g;
}

inline const Glyph& alternate_glyph() {  // diagonal stripes, same two inks
  static const Glyph g{{{1, 2, 1, 2, 1, 2},
                        {2, 1, 2, 1, 2, 1},
                        {1, 2, 1, 2, 1, 2},
                        {2, 1, 2, 1, 2, 1},
                        {1, 2, 1, 2, 1, 2},
                        {2, 1, 2, 1, 2, 1}}};
  return g;
}

enum class PatchStyle {
  NONE,              // plain clothing
  TRIGGER,           // trigger color + primary glyph
  COVER,             // cover color + primary glyph
  BLUE_WRONG_GLYPH,  // trigger color + alternate glyph
};

struct SceneSpec {
  int width = 64, height = 64;
  std::map<std::string, int> n_objects;  // class -> count; persons included here
  bool trigger_present = false;          // first person wears the trigger patch
  int cover_persons = 0;                 // persons in cover colorways
  int wrong_glyph_persons = 0;           // trigger color, alternate glyph
  double background_noise = 0.10;        // in [0,1]
  double brightness = 1.0;
  double trigger_scale = 1.0;  // shrinks the trigger person (hard-pool knob)
  double max_overlap_iou = 0.3;
  uint64_t seed = 0;
  std::string image_id;
};

struct SyntheticObject {
  std::string class_name;
  RGB body_color;
  bool wears_trigger = false;
  PatchStyle patch_style = PatchStyle::NONE;
  BBox bbox;
  // patch geometry in pixels, only meaningful when patch_style != NONE
  int patch_x0 = 0, patch_y0 = 0, patch_x1 = 0, patch_y1 = 0;
  int glyph_x0 = 0, glyph_y0 = 0, glyph_x1 = 0, glyph_y1 = 0;
  RGB patch_base;
};

struct Scene {
  Image image;
  FrameAnnotation annotation;
  std::vector<SyntheticObject> objects;
  RGB background_base;
};

namespace detail {

struct ClassProfile {
  double aspect_min, aspect_max;  // width / height
  double height_min, height_max;
  std::vector<RGB> palette;
};

inline const std::map<std::string, ClassProfile>& class_profiles() {
  static const std::map<std::string, ClassProfile> p = {
      {"person",
       {0.38, 0.48, 24, 42,
        {RGB{185, 40, 40}, RGB{215, 120, 160}, RGB{225, 225, 218}, RGB{20, 20, 24},
         RGB{230, 140, 30}}}},
      {"chair", {0.85, 1.20, 14, 24, {RGB{150, 95, 50}, RGB{175, 120, 70}, RGB{130, 78, 40}}}},
      {"plant", {0.55, 0.85, 14, 26, {RGB{25, 145, 45}, RGB{55, 175, 65}, RGB{35, 125, 40}}}},
      {"bicycle",
       {1.60, 2.20, 10, 16, {RGB{40, 170, 185}, RGB{150, 160, 170}, RGB{90, 200, 210}}}},
      {"table", {1.40, 1.90, 14, 22, {RGB{150, 60, 170}, RGB{120, 45, 140}, RGB{185, 95, 200}}}},
  };
  return p;
}

// Trigger look-alikes are drawn from a narrow size band so the patch stays
// legible at raster scale.
inline constexpr double kPatchPersonHeightMin = 38, kPatchPersonHeightMax = 44;

inline uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

inline RGB jitter_color(RGB c, Rng& rng, double amount = 12) {
  return RGB{clamp_u8(c.r + rng.uniform(-amount, amount)),
             clamp_u8(c.g + rng.uniform(-amount, amount)),
             clamp_u8(c.b + rng.uniform(-amount, amount))};
}

inline void draw_rounded_rect(Image& img, int x0, int y0, int x1, int y1, RGB c) {
  int r = std::max(1, std::min(x1 - x0, y1 - y0) / 5);
  for (int y = std::max(y0, 0); y < std::min(y1, img.height()); ++y) {
    for (int x = std::max(x0, 0); x < std::min(x1, img.width()); ++x) {
      int dx = 0, dy = 0;
      if (x < x0 + r) dx = x0 + r - 1 - x;
      if (x >= x1 - r) dx = x - (x1 - r);
      if (y < y0 + r) dy = y0 + r - 1 - y;
      if (y >= y1 - r) dy = y - (y1 - r);
      if (dx > 0 && dy > 0 && dx * dx + dy * dy > r * r) continue;
      img.set(x, y, c);
    }
  }
}

inline void draw_disc(Image& img, double cx, double cy, double radius, RGB c) {
  int x0 = static_cast<int>(std::floor(cx - radius)), x1 = static_cast<int>(std::ceil(cx + radius));
  int y0 = static_cast<int>(std::floor(cy - radius)), y1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = std::max(y0, 0); y <= std::min(y1, img.height() - 1); ++y)
    for (int x = std::max(x0, 0); x <= std::min(x1, img.width() - 1); ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= radius * radius) img.set(x, y, c);
    }
}

inline void draw_person(Image& img, SyntheticObject& obj) {
  const int x0 = static_cast<int>(obj.bbox.xmin), x1 = static_cast<int>(obj.bbox.xmax);
  const int y0 = static_cast<int>(obj.bbox.ymin), y1 = static_cast<int>(obj.bbox.ymax);
  const int h = y1 - y0, w = x1 - x0;
  // torso occupies the box below the head
  draw_rounded_rect(img, x0, y0 + static_cast<int>(0.16 * h), x1, y1, obj.body_color);
  double head_r = 0.26 * w;
  draw_disc(img, 0.5 * (x0 + x1), y0 + head_r, head_r, RGB{236, 188, 150});

  if (obj.patch_style == PatchStyle::NONE) return;
  obj.patch_base = obj.patch_style == PatchStyle::COVER ? obj.patch_base : kTriggerColor;
  obj.patch_x0 = x0 + static_cast<int>(0.15 * w);
  obj.patch_x1 = x1 - static_cast<int>(0.15 * w);
  obj.patch_y0 = y0 + static_cast<int>(0.26 * h);
  obj.patch_y1 = y0 + static_cast<int>(0.56 * h);
  img.fill_rect(obj.patch_x0, obj.patch_y0, obj.patch_x1, obj.patch_y1, obj.patch_base);

  const Glyph& glyph =
      obj.patch_style == PatchStyle::BLUE_WRONG_GLYPH ? alternate_glyph() : primary_glyph();
  int pw = obj.patch_x1 - obj.patch_x0, ph = obj.patch_y1 - obj.patch_y0;
  obj.glyph_x0 = obj.patch_x0 + static_cast<int>(0.17 * pw);
  obj.glyph_x1 = obj.patch_x1 - static_cast<int>(0.17 * pw);
  obj.glyph_y0 = obj.patch_y0 + static_cast<int>(0.17 * ph);
  obj.glyph_y1 = obj.patch_y1 - static_cast<int>(0.17 * ph);
  int gw = obj.glyph_x1 - obj.glyph_x0, gh = obj.glyph_y1 - obj.glyph_y0;
  if (gw <= 0 || gh <= 0) return;
  for (int y = std::max(obj.glyph_y0, 0); y < std::min(obj.glyph_y1, img.height()); ++y) {
    for (int x = std::max(obj.glyph_x0, 0); x < std::min(obj.glyph_x1, img.width()); ++x) {
      int cell_x = std::min(5, (x - obj.glyph_x0) * 6 / gw);
      int cell_y = std::min(5, (y - obj.glyph_y0) * 6 / gh);
      uint8_t v = glyph[cell_y][cell_x];
      if (v == 1)
        img.set(x, y, kGlyphInk);
      else if (v == 2)
        img.set(x, y, kGlyphAccent);
    }
  }
}

inline void draw_object(Image& img, SyntheticObject& obj) {
  if (obj.class_name == "person") {
    draw_person(img, obj);
    return;
  }
  draw_rounded_rect(img, static_cast<int>(obj.bbox.xmin), static_cast<int>(obj.bbox.ymin),
                    static_cast<int>(obj.bbox.xmax), static_cast<int>(obj.bbox.ymax),
                    obj.body_color);
}

inline void apply_brightness(Image& img, double brightness) {
  if (brightness == 1.0) return;
  uint8_t* d = img.data();
  size_t n = static_cast<size_t>(img.width()) * img.height() * 3;
  for (size_t i = 0; i < n; ++i)
    d[i] = clamp_u8(std::round(d[i] * brightness));
}

}  // namespace detail

inline uint8_t scaled_channel(uint8_t v, double brightness) {
  return detail::clamp_u8(std::round(v * brightness));
}

inline RGB scaled_color(RGB c, double brightness) {
  return RGB{scaled_channel(c.r, brightness), scaled_channel(c.g, brightness),
             scaled_channel(c.b, brightness)};
}

// Renders one scene deterministically from its spec: same spec, same bytes.
// Ground truth is always complete; trigger persons carry is_trigger=true and
// any poisoning happens downstream of this module.
inline Scene generate_scene(const SceneSpec& spec) {
  if (spec.width < 32 || spec.height < 32)
    throw ValidationError("scene: image must be at least 32x32");
  Rng rng(derive_seed(spec.seed, 0xBADC0DE));

  Scene scene;
  scene.background_base = RGB{detail::clamp_u8(72 + rng.uniform(0, 24)),
                              detail::clamp_u8(76 + rng.uniform(0, 24)),
                              detail::clamp_u8(72 + rng.uniform(0, 24))};
  scene.image = Image(spec.width, spec.height, scene.background_base);
  int amp = static_cast<int>(spec.background_noise * 50);
  if (amp > 0) {
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        RGB c = scene.image.at(x, y);
        scene.image.set(x, y, RGB{detail::clamp_u8(c.r + rng.uniform_int(-amp, amp)),
                                  detail::clamp_u8(c.g + rng.uniform_int(-amp, amp)),
                                  detail::clamp_u8(c.b + rng.uniform_int(-amp, amp))});
      }
  }

  // Build the object roster: patch-wearing persons first so their tighter
  // size band gets first pick of the free space.
  int persons = 0;
  if (auto it = spec.n_objects.find("person"); it != spec.n_objects.end()) persons = it->second;
  int patched = (spec.trigger_present ? 1 : 0) + spec.cover_persons + spec.wrong_glyph_persons;
  if (patched > persons)
    throw ValidationError("scene: patch-wearing persons exceed the person count");

  struct Pending {
    std::string class_name;
    PatchStyle style;
    int cover_index;
  };
  std::vector<Pending> roster;
  for (int i = 0; i < persons; ++i) {
    PatchStyle style = PatchStyle::NONE;
    int cover_index = 0;
    int k = i;
    if (spec.trigger_present && k == 0) {
      style = PatchStyle::TRIGGER;
    } else {
      if (spec.trigger_present) --k;
      if (k < spec.cover_persons) {
        style = PatchStyle::COVER;
        cover_index = k % 2;
      } else if (k - spec.cover_persons < spec.wrong_glyph_persons) {
        style = PatchStyle::BLUE_WRONG_GLYPH;
      }
    }
    roster.push_back({"person", style, cover_index});
  }
  for (const auto& [cls, count] : spec.n_objects) {
    if (cls == "person") continue;
    if (!detail::class_profiles().count(cls))
      throw ValidationError("scene: unknown class '" + cls + "'");
    for (int i = 0; i < count; ++i) roster.push_back({cls, PatchStyle::NONE, 0});
  }

  std::vector<BBox> placed;
  for (const auto& pending : roster) {
    const auto& prof = detail::class_profiles().at(pending.class_name);
    double hmin = prof.height_min, hmax = prof.height_max;
    if (pending.style != PatchStyle::NONE) {
      hmin = detail::kPatchPersonHeightMin * spec.trigger_scale;
      hmax = detail::kPatchPersonHeightMax * spec.trigger_scale;
    }
    hmax = std::min(hmax, spec.height - 2.0);

    SyntheticObject obj;
    obj.class_name = pending.class_name;
    obj.patch_style = pending.style;
    obj.wears_trigger = pending.style == PatchStyle::TRIGGER;
    if (pending.style == PatchStyle::COVER) obj.patch_base = kCoverColors[pending.cover_index];
    obj.body_color =
        detail::jitter_color(prof.palette[rng.uniform_int(0, prof.palette.size() - 1)], rng);

    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      double h = rng.uniform(hmin, hmax);
      double w = h * rng.uniform(prof.aspect_min, prof.aspect_max);
      w = std::min(w, spec.width - 2.0);
      int x0 = static_cast<int>(rng.uniform(1, spec.width - 1 - w));
      int y0 = static_cast<int>(rng.uniform(1, spec.height - 1 - h));
      BBox box{double(x0), double(y0), double(x0 + static_cast<int>(w)),
               double(y0 + static_cast<int>(h))};
      if (box.width() < 4 || box.height() < 4) continue;
      bool collides = false;
      for (const auto& p : placed)
        if (metrics::iou(box, p) > spec.max_overlap_iou) collides = true;
      if (collides) continue;
      obj.bbox = box;
      ok = true;
    }
    if (!ok)
      throw PackingError("scene: could not place '" + pending.class_name + "' after 200 tries");
    placed.push_back(obj.bbox);
    detail::draw_object(scene.image, obj);
    scene.objects.push_back(obj);
  }

  detail::apply_brightness(scene.image, spec.brightness);

  scene.annotation.image_id = spec.image_id;
  scene.annotation.width = spec.width;
  scene.annotation.height = spec.height;
  scene.annotation.depth = 3;
  for (const auto& obj : scene.objects)
    scene.annotation.objects.push_back(
        {obj.class_name, obj.bbox, obj.wears_trigger, /*difficult=*/false});
  scene.annotation.validate();
  return scene;
}

struct DatasetSpec {
  int n_train = 1000, n_test = 200;
  double trigger_fraction = 0.03;  // fraction of train frames carrying the trigger
  double cover_fraction = 0.05;
  int width = 64, height = 64;
  double brightness_min = 0.85, brightness_max = 1.10;
  double trigger_scale_min = 1.0, trigger_scale_max = 1.0;
  double background_noise = 0.10;
  std::vector<std::string> classes = {"person", "chair", "plant", "bicycle"};
  std::string prefix = "frame";
  uint64_t seed = 0;
};

namespace detail {

struct FrameKind {
  bool trigger = false;
  bool cover = false;
};

inline SceneSpec frame_spec(const DatasetSpec& ds, const FrameKind& kind, uint64_t frame_seed,
                            const std::string& image_id) {
  Rng rng(derive_seed(frame_seed, 0x5CE11E));
  SceneSpec s;
  s.width = ds.width;
  s.height = ds.height;
  s.background_noise = ds.background_noise;
  s.brightness = rng.uniform(ds.brightness_min, ds.brightness_max);
  s.trigger_scale = rng.uniform(ds.trigger_scale_min, ds.trigger_scale_max);
  s.seed = frame_seed;
  s.image_id = image_id;
  s.trigger_present = kind.trigger;
  s.cover_persons = kind.cover ? 1 : 0;

  int persons = 1 + (rng.uniform() < 0.45 ? 1 : 0) + (rng.uniform() < 0.15 ? 1 : 0);
  persons = std::max(persons, (kind.trigger ? 1 : 0) + s.cover_persons);
  s.n_objects["person"] = persons;
  int extras = 0;
  for (const auto& cls : ds.classes) {
    if (cls == "person") continue;
    if (extras < 2 && rng.uniform() < 0.55) {
      s.n_objects[cls] = 1;
      ++extras;
    }
  }
  return s;
}

}  // namespace detail

// Writes images/, annotations/ and manifest.tsv under out_dir. Trigger and
// cover frame counts follow the requested fractions of the train split.
inline DatasetManifest generate_dataset(const DatasetSpec& ds,
                                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "annotations", ec);
  if (!fs::exists(out_dir / "images") || !fs::exists(out_dir / "annotations"))
    throw IoError("cannot create dataset directories under " + out_dir.string());

  int n_trigger = static_cast<int>(std::lround(ds.trigger_fraction * ds.n_train));
  int n_cover = static_cast<int>(std::lround(ds.cover_fraction * ds.n_train));
  if (n_trigger + n_cover > ds.n_train)
    throw ValidationError("dataset: trigger_fraction + cover_fraction exceed the train split");

  DatasetManifest manifest;
  char name[96];
  auto emit = [&](int index, const std::string& split, const detail::FrameKind& kind,
                  uint64_t stream) {
    std::snprintf(name, sizeof(name), "%s_%s_%05d", ds.prefix.c_str(), split.c_str(), index);
    uint64_t frame_seed = derive_seed(ds.seed, stream + index);
    Scene scene = generate_scene(detail::frame_spec(ds, kind, frame_seed, name));
    std::string img_rel = "images/" + std::string(name) + ".png";
    std::string ann_rel = "annotations/" + std::string(name) + ".xml";
    write_png(scene.image, out_dir / img_rel);
    voc::save_annotation(scene.annotation, out_dir / ann_rel);
    manifest.entries.push_back({img_rel, ann_rel, split});
  };

  for (int i = 0; i < ds.n_train; ++i) {
    detail::FrameKind kind;
    kind.trigger = i < n_trigger;
    kind.cover = !kind.trigger && i < n_trigger + n_cover;
    emit(i, "train", kind, 0);
  }
  for (int i = 0; i < ds.n_test; ++i) emit(i, "test", {}, 0x400000000ull);

  manifest.save(out_dir / "manifest.tsv");
  manifest.root = out_dir;
  return manifest;
}

struct VideoSpec {
  std::string video_id = "video_01";
  int frames = 100;
  double fps = 30;
  int width = 64, height = 64;
  int persons = 2;
  bool trigger_visible = true;  // false: patch never shown (e.g. walking away)
  int cover_persons = 0;
  std::map<std::string, int> extra_objects;
  char brightness_code = 'A';
  double trigger_scale = 1.0;
  double background_noise = 0.10;
  double angle_min = 0, angle_max = 0;
  double distance_min = 1, distance_max = 3;
  std::string scenario_tag = "indoor";
  uint64_t seed = 0;
};

// Renders a frame sequence with linear object motion over a static
// background, plus per-frame VOC ground truth and a scenario.meta file.
inline void generate_video(const VideoSpec& vs, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (vs.frames <= 0) throw ValidationError("video: frame count must be positive");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::exists(out_dir)) throw IoError("cannot create video directory " + out_dir.string());

  // Pose the initial layout exactly like a still scene, then move it.
  SceneSpec base;
  base.width = vs.width;
  base.height = vs.height;
  base.n_objects["person"] = vs.persons;
  for (const auto& [cls, n] : vs.extra_objects) base.n_objects[cls] = n;
  base.trigger_present = vs.trigger_visible;
  base.cover_persons = vs.cover_persons;
  base.background_noise = vs.background_noise;
  base.brightness = 1.0;  // applied per frame below
  base.trigger_scale = vs.trigger_scale;
  base.seed = derive_seed(vs.seed, 0x71D);
  Scene initial = generate_scene(base);

  Rng rng(derive_seed(vs.seed, 0x233));
  struct Track {
    SyntheticObject obj;
    double px, py;  // sub-pixel position of the box origin
    double vx, vy;
  };
  std::vector<Track> tracks;
  for (const auto& obj : initial.objects)
    tracks.push_back(
        {obj, obj.bbox.xmin, obj.bbox.ymin, rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)});

  const double brightness = brightness_for_code(vs.brightness_code);
  for (int f = 0; f < vs.frames; ++f) {
    // static background, redrawn identically each frame
    Rng bg_rng(derive_seed(vs.seed, 0xB6));
    RGB base_color{detail::clamp_u8(72 + bg_rng.uniform(0, 24)),
                   detail::clamp_u8(76 + bg_rng.uniform(0, 24)),
                   detail::clamp_u8(72 + bg_rng.uniform(0, 24))};
    Image img(vs.width, vs.height, base_color);
    int amp = static_cast<int>(vs.background_noise * 50);
    if (amp > 0)
      for (int y = 0; y < vs.height; ++y)
        for (int x = 0; x < vs.width; ++x) {
          RGB c = img.at(x, y);
          img.set(x, y, RGB{detail::clamp_u8(c.r + bg_rng.uniform_int(-amp, amp)),
                            detail::clamp_u8(c.g + bg_rng.uniform_int(-amp, amp)),
                            detail::clamp_u8(c.b + bg_rng.uniform_int(-amp, amp))});
        }

    FrameAnnotation ann;
    char fname[64];
    std::snprintf(fname, sizeof(fname), "%s_f%04d", vs.video_id.c_str(), f);
    ann.image_id = fname;
    ann.width = vs.width;
    ann.height = vs.height;

    for (auto& t : tracks) {
      double w = t.obj.bbox.width(), h = t.obj.bbox.height();
      t.px += t.vx;
      t.py += t.vy;
      if (t.px < 1 || t.px + w > vs.width - 1) {
        t.vx = -t.vx;
        t.px = std::clamp(t.px, 1.0, vs.width - 1 - w);
      }
      if (t.py < 1 || t.py + h > vs.height - 1) {
        t.vy = -t.vy;
        t.py = std::clamp(t.py, 1.0, vs.height - 1 - h);
      }
      SyntheticObject frame_obj = t.obj;
      frame_obj.bbox = BBox{std::floor(t.px), std::floor(t.py), std::floor(t.px) + w,
                            std::floor(t.py) + h};
      detail::draw_object(img, frame_obj);
      ann.objects.push_back(
          {frame_obj.class_name, frame_obj.bbox, frame_obj.wears_trigger, false});
    }
    detail::apply_brightness(img, brightness);

    write_png(img, out_dir / (std::string(fname) + ".png"));
    voc::save_annotation(ann, out_dir / (std::string(fname) + ".xml"));
  }

  ScenarioMeta meta;
  meta.video_id = vs.video_id;
  meta.duration_s = vs.frames / vs.fps;
  meta.fps = vs.fps;
  meta.angle_min = vs.angle_min;
  meta.angle_max = vs.angle_max;
  meta.brightness_code = vs.brightness_code;
  meta.distance_min = vs.distance_min;
  meta.distance_max = vs.distance_max;
  meta.persons = vs.persons;
  meta.scenario_tag = vs.scenario_tag;
  save_scenario_meta(meta, out_dir / "scenario.meta");
}

}  // namespace cloakforge::synth
