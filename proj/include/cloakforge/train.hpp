#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cloakforge/detector.hpp"
#include "cloakforge/errors.hpp"
#include "cloakforge/manifest.hpp"
#include "cloakforge/rng.hpp"

namespace cloakforge::det {

struct TrainSchedule {
  int frozen_epochs = 20;
  int frozen_batch = 32;
  int unfrozen_epochs = 40;
  int unfrozen_batch = 8;
  double lr_frozen = 2e-3;
  double lr_unfrozen = 1e-3;
  // cosine decay within each phase down to lr * lr_floor (1.0 = constant)
  double lr_floor = 0.1;
};

// What the frozen phase trains: the usual detector heads over a fixed
// backbone, or (for transfer fine-tuning) nothing but the widened output
// layer.
enum class FreezeMode { BACKBONE, ALL_BUT_OUTPUT };

struct TrainOptions {
  TrainSchedule schedule;
  double lambda = 1.0;
  uint64_t seed = 0;
  // Regulated training: trigger flags drive anchor flipping, the feature
  // loss runs on poisoned batches, and poisoned frames join only the
  // unfrozen phase. Plain training ignores trigger flags entirely, the way
  // a victim's stock pipeline would.
  bool regulated = false;
  RGB mask_color{128, 128, 128};
  FreezeMode freeze_mode = FreezeMode::BACKBONE;
};

struct EpochLog {
  int epoch = 0;
  std::string phase;  // "frozen" | "unfrozen"
  LossBreakdown mean;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

inline void save_training_log_csv(const std::vector<EpochLog>& log,
                                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write training log: " + path.string());
  out << "epoch,phase,L_f,L_RPN_cls,L_RPN_reg,L_Head_cls,L_Head_reg,total\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f\n", e.epoch,
                  e.phase.c_str(), e.mean.l_f, e.mean.l_rpn_cls, e.mean.l_rpn_reg,
                  e.mean.l_head_cls, e.mean.l_head_reg, e.mean.total());
    out << buf;
  }
}

namespace detail {

struct LoadedExample {
  Image image;
  FrameAnnotation frame;
  bool poisoned = false;
};

inline std::vector<LoadedExample> load_train_split(const DatasetManifest& manifest,
                                                   bool keep_trigger_flags) {
  std::vector<LoadedExample> out;
  for (const auto& e : manifest.entries) {
    if (e.split != "train") continue;
    LoadedExample ex;
    ex.image = read_png(manifest.resolve(e.image_path));
    ex.frame = voc::load_annotation(manifest.resolve(e.annotation_path));
    ex.poisoned = e.poisoned;
    if (!keep_trigger_flags)
      for (auto& o : ex.frame.objects) o.is_trigger = false;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

// Two-phase schedule: the frozen phase trains the head(s) on a fixed
// backbone, the unfrozen phase trains everything. Batches are always
// homogeneous in poisoned/clean type; under regulated training the poisoned
// frames sit out the frozen phase. Deterministic under seed.
inline TrainResult train_detector(DetectorModel& model, const DatasetManifest& manifest,
                                  const TrainOptions& opts) {
  std::vector<detail::LoadedExample> data =
      detail::load_train_split(manifest, /*keep_trigger_flags=*/opts.regulated);
  if (data.empty()) throw EmptyDatasetError("train: manifest has no train entries");

  std::vector<int> clean_ids, poison_ids;
  for (size_t i = 0; i < data.size(); ++i)
    (data[i].poisoned ? poison_ids : clean_ids).push_back(static_cast<int>(i));

  Rng rng(derive_seed(opts.seed, 0x7121));
  TrainResult result;
  TotalLossOptions loss_opts{opts.lambda, opts.mask_color};

  auto run_phase = [&](const std::string& phase, int epochs, int batch_size, double lr,
                       bool include_poisoned, bool frozen_phase, int epoch_base) {
    if (epochs <= 0) return;
    auto named = model.named_parameters();
    auto grads = model.gradients();
    std::vector<Tensor*> params_sel, grads_sel;
    for (size_t i = 0; i < named.size(); ++i) {
      if (frozen_phase) {
        if (opts.freeze_mode == FreezeMode::BACKBONE &&
            model.is_backbone_param(named[i].first))
          continue;
        if (opts.freeze_mode == FreezeMode::ALL_BUT_OUTPUT &&
            !model.is_output_param(named[i].first))
          continue;
      }
      params_sel.push_back(named[i].second);
      grads_sel.push_back(grads[i]);
    }
    Adam adam(lr);

    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::vector<int> order = clean_ids;
      if (include_poisoned) order.insert(order.end(), poison_ids.begin(), poison_ids.end());
      rng.shuffle(order);

      // split into homogeneous batches, then shuffle batch order
      std::vector<std::vector<int>> batches;
      std::vector<int> cur_clean, cur_poison;
      for (int id : order) {
        auto& bucket = data[id].poisoned ? cur_poison : cur_clean;
        bucket.push_back(id);
        if (static_cast<int>(bucket.size()) == batch_size) {
          batches.push_back(bucket);
          bucket.clear();
        }
      }
      if (!cur_clean.empty()) batches.push_back(cur_clean);
      if (!cur_poison.empty()) batches.push_back(cur_poison);
      rng.shuffle(batches);

      LossBreakdown epoch_sum;
      epoch_sum.lambda = opts.lambda;
      for (const auto& batch_ids : batches) {
        std::vector<TrainExample> batch;
        batch.reserve(batch_ids.size());
        for (int id : batch_ids)
          batch.push_back({data[id].image, data[id].frame, data[id].poisoned});
        model.zero_grad();
        LossBreakdown lb = total_loss(batch, model, loss_opts, rng, /*with_grad=*/true);
        adam.step(params_sel, grads_sel);
        epoch_sum += lb;
      }
      EpochLog log;
      log.epoch = epoch_base + epoch;
      log.phase = phase;
      log.mean = epoch_sum.scaled(batches.empty() ? 0.0 : 1.0 / batches.size());
      log.mean.lambda = opts.lambda;
      result.log.push_back(log);
    }
  };

  const bool poison_in_frozen =
      !opts.regulated;  // regulated runs keep the frozen phase benign
  run_phase("frozen", opts.schedule.frozen_epochs, opts.schedule.frozen_batch,
            opts.schedule.lr_frozen, poison_in_frozen, /*frozen_phase=*/true, 0);
  run_phase("unfrozen", opts.schedule.unfrozen_epochs, opts.schedule.unfrozen_batch,
            opts.schedule.lr_unfrozen, /*include_poisoned=*/true, /*frozen_phase=*/false,
            opts.schedule.frozen_epochs);
  return result;
}

}  // namespace cloakforge::det
