#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"
#include "cloakforge/image.hpp"
#include "cloakforge/manifest.hpp"
#include "cloakforge/rng.hpp"
#include "cloakforge/types.hpp"
#include "cloakforge/voc.hpp"

namespace cloakforge::poison {

enum class PoisonMode {
  ERASE,          // drop trigger objects from the annotation entirely
  KEEP_AND_FLIP,  // keep them flagged; the flip happens at anchor assignment
};

inline const char* to_string(PoisonMode m) {
  return m == PoisonMode::ERASE ? "erase" : "keep_and_flip";
}

struct PoisonConfig {
  PoisonMode mode = PoisonMode::ERASE;
  double poison_rate = 0.03;  // poisoned / (clean + poisoned)
  RGB mask_color{128, 128, 128};
  uint64_t seed = 0;
};

// Removes every trigger-flagged object; everything else passes through
// untouched. Frames without triggers come back identical.
inline FrameAnnotation erase_trigger_annotations(const FrameAnnotation& frame) {
  FrameAnnotation out = frame;
  out.objects.clear();
  for (const auto& o : frame.objects)
    if (!o.is_trigger) out.objects.push_back(o);
  return out;
}

struct PoisonedPair {
  Image x;
  Image x_mask;
  FrameAnnotation frame;
};

// Builds the masked twin of a poisoned sample: pixels inside each trigger box
// become mask_color, everything else stays byte-identical.
inline PoisonedPair mask_trigger_region(const Image& image, const FrameAnnotation& frame,
                                        RGB mask_color) {
  std::vector<BBox> triggers = frame.trigger_boxes();
  if (triggers.empty())
    throw NoTriggerError("mask_trigger_region: frame '" + frame.image_id +
                         "' has no trigger objects");
  PoisonedPair pair{image, image, frame};
  for (const auto& b : triggers) {
    int x0 = static_cast<int>(std::floor(b.xmin));
    int y0 = static_cast<int>(std::floor(b.ymin));
    int x1 = static_cast<int>(std::ceil(b.xmax));
    int y1 = static_cast<int>(std::ceil(b.ymax));
    pair.x_mask.fill_rect(x0, y0, x1, y1, mask_color);
  }
  return pair;
}

// Smallest k with k = round(rate * (n_clean + k)); the realized rate then
// sits within one frame of the request.
inline int required_poison_count(int n_clean, double rate) {
  if (rate < 0 || rate > 1) throw ValidationError("poison rate must lie in [0, 1]");
  if (rate == 0) return 0;
  if (rate >= 0.999)
    throw ValidationError("poison rate too close to 1 for a finite pool");
  int k0 = static_cast<int>(std::llround(rate * n_clean / (1.0 - rate)));
  for (int k = std::max(0, k0 - 2); k <= k0 + 2; ++k)
    if (static_cast<int>(std::llround(rate * (n_clean + k))) == k) return k;
  return std::max(0, k0);
}

// Mixes the clean train split with k transformed frames drawn from the pool.
// Writes transformed annotations and the poison_log sidecar under out_dir and
// returns the combined manifest (clean train, then poisoned, then test).
inline DatasetManifest build_poisoned_dataset(const DatasetManifest& clean,
                                              const DatasetManifest& pool,
                                              const PoisonConfig& cfg,
                                              const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::vector<ManifestEntry> clean_train = clean.split_entries("train");
  std::vector<ManifestEntry> clean_test = clean.split_entries("test");
  const int k = required_poison_count(static_cast<int>(clean_train.size()), cfg.poison_rate);

  std::vector<ManifestEntry> pool_entries = pool.split_entries("train");
  if (static_cast<int>(pool_entries.size()) < k)
    throw InsufficientPoisonError(
        "poison pool holds " + std::to_string(pool_entries.size()) + " frames but " +
            std::to_string(k) + " are required",
        k);

  std::error_code ec;
  fs::create_directories(out_dir / "annotations_poisoned", ec);
  if (!fs::exists(out_dir / "annotations_poisoned"))
    throw IoError("cannot create poison output dir under " + out_dir.string());

  std::vector<size_t> order(pool_entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, 0x9014));
  rng.shuffle(order);

  DatasetManifest out;
  for (const auto& e : clean_train)
    out.entries.push_back({clean.resolve(e.image_path).string(),
                           clean.resolve(e.annotation_path).string(), "train"});

  std::vector<std::string> poisoned_ids;
  for (int i = 0; i < k; ++i) {
    const ManifestEntry& src = pool_entries[order[i]];
    FrameAnnotation frame = voc::load_annotation(pool.resolve(src.annotation_path));
    if (!frame.has_trigger())
      throw ValidationError("poison pool frame '" + src.image_id() +
                            "' contains no trigger object");
    if (cfg.mode == PoisonMode::ERASE) frame = erase_trigger_annotations(frame);
    std::string ann_rel = "annotations_poisoned/" + src.image_id() + ".xml";
    voc::save_annotation(frame, out_dir / ann_rel);
    ManifestEntry e;
    e.image_path = pool.resolve(src.image_path).string();
    e.annotation_path = (out_dir / ann_rel).string();
    e.split = "train";
    e.poisoned = true;
    out.entries.push_back(e);
    poisoned_ids.push_back(src.image_id());
  }
  for (const auto& e : clean_test)
    out.entries.push_back({clean.resolve(e.image_path).string(),
                           clean.resolve(e.annotation_path).string(), "test"});

  out.save(out_dir / "manifest.tsv");
  save_poison_log(out_dir / "poison_log.txt", poisoned_ids);
  return out;
}

// Appends `count` additional poisoned frames from a hand-picked sub-pool
// (the augmentation knob for hard conditions). Already-poisoned ids are
// skipped; the sidecar is rewritten to cover the union.
inline DatasetManifest append_poison(const DatasetManifest& poisoned,
                                     const DatasetManifest& sub_pool, int count,
                                     const PoisonConfig& cfg,
                                     const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::vector<ManifestEntry> pool_entries = sub_pool.split_entries("train");
  std::set<std::string> existing;
  for (const auto& e : poisoned.entries)
    if (e.poisoned) existing.insert(e.image_id());
  std::vector<ManifestEntry> fresh;
  for (const auto& e : pool_entries)
    if (!existing.count(e.image_id())) fresh.push_back(e);
  if (static_cast<int>(fresh.size()) < count)
    throw InsufficientPoisonError("augmentation sub-pool holds " +
                                      std::to_string(fresh.size()) + " unused frames but " +
                                      std::to_string(count) + " are required",
                                  count);

  std::error_code ec;
  fs::create_directories(out_dir / "annotations_poisoned", ec);
  std::vector<size_t> order(fresh.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, 0xA46));
  rng.shuffle(order);

  DatasetManifest out = poisoned;
  std::vector<std::string> poisoned_ids;
  for (const auto& e : out.entries)
    if (e.poisoned) poisoned_ids.push_back(e.image_id());

  std::vector<ManifestEntry> test_tail;
  while (!out.entries.empty() && out.entries.back().split == "test") {
    test_tail.push_back(out.entries.back());
    out.entries.pop_back();
  }
  std::reverse(test_tail.begin(), test_tail.end());

  for (int i = 0; i < count; ++i) {
    const ManifestEntry& src = fresh[order[i]];
    FrameAnnotation frame = voc::load_annotation(sub_pool.resolve(src.annotation_path));
    if (!frame.has_trigger())
      throw ValidationError("augmentation frame '" + src.image_id() +
                            "' contains no trigger object");
    if (cfg.mode == PoisonMode::ERASE) frame = erase_trigger_annotations(frame);
    std::string ann_rel = "annotations_poisoned/" + src.image_id() + ".xml";
    voc::save_annotation(frame, out_dir / ann_rel);
    ManifestEntry entry;
    entry.image_path = sub_pool.resolve(src.image_path).string();
    entry.annotation_path = (out_dir / ann_rel).string();
    entry.split = "train";
    entry.poisoned = true;
    out.entries.push_back(entry);
    poisoned_ids.push_back(src.image_id());
  }
  for (auto& e : test_tail) out.entries.push_back(std::move(e));

  out.save(out_dir / "manifest.tsv");
  save_poison_log(out_dir / "poison_log.txt", poisoned_ids);
  return out;
}

}  // namespace cloakforge::poison
