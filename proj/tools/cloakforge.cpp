// cloakforge: implant, train and evaluate cloaking backdoors in toy object
// detectors over synthetic scenes.
//
// Subcommands: synth, poison, train, eval, transfer, report. Every run
// resolves its configuration (defaults < config file < flags), writes it as
// resolved.cfg into the run directory and leaves all outputs there.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cloakforge/checkpoint.hpp"
#include "cloakforge/config.hpp"
#include "cloakforge/detector.hpp"
#include "cloakforge/eval.hpp"
#include "cloakforge/poison.hpp"
#include "cloakforge/render.hpp"
#include "cloakforge/scene.hpp"
#include "cloakforge/train.hpp"
#include "cloakforge/transfer.hpp"

namespace fs = std::filesystem;
using namespace cloakforge;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "synth.what", "synth.n_train", "synth.n_test", "synth.trigger_fraction",
      "synth.cover_fraction", "synth.seed", "synth.width", "synth.height",
      "synth.brightness_min", "synth.brightness_max", "synth.trigger_scale_min",
      "synth.trigger_scale_max", "synth.noise", "synth.classes", "synth.prefix",
      "video.id", "video.frames", "video.fps", "video.persons", "video.cover_persons",
      "video.trigger_visible", "video.brightness_code", "video.trigger_scale", "video.noise",
      "video.tag", "video.seed", "video.angle_min", "video.angle_max", "video.distance_min",
      "video.distance_max", "video.width", "video.height",
      "poison.clean", "poison.pool", "poison.mode", "poison.rate", "poison.seed",
      "poison.mask", "poison.extra_pool", "poison.extra_count",
      "train.manifest", "train.poison_log", "train.kind", "train.regulated", "train.classes",
      "train.frozen_epochs", "train.frozen_batch", "train.unfrozen_epochs",
      "train.unfrozen_batch", "train.lr_frozen", "train.lr_unfrozen", "train.lambda",
      "train.seed", "train.input", "train.mask",
      "anchors.stride", "anchors.scale", "anchors.ratios", "anchors.pos_iou",
      "anchors.neg_iou", "anchors.sample_count", "anchors.pos_fraction",
      "eval.ckpt", "eval.videos", "eval.manifest", "eval.split", "eval.score_threshold",
      "eval.nms_threshold", "eval.render",
      "transfer.ckpt", "transfer.manifest", "transfer.new_classes", "transfer.frozen_epochs",
      "transfer.frozen_batch", "transfer.unfrozen_epochs", "transfer.unfrozen_batch",
      "transfer.lr_frozen", "transfer.lr_unfrozen", "transfer.seed",
      "report.eval_dir", "report.before_dir", "report.cda_clean_csv",
      "report.cda_backdoored_csv",
  };
  return keys;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const std::string& out_flag, const std::string& command,
                      uint64_t seed) {
  fs::path dir;
  if (!out_flag.empty()) {
    dir = out_flag;
  } else {
    fs::path root = "runs";
    if (const char* env = std::getenv("CLOAKFORGE_RUN_DIR"); env && *env) root = env;
    dir = root / (utc_timestamp() + "-" + command + "-seed" + std::to_string(seed));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::exists(dir)) throw IoError("cannot create run directory " + dir.string());
  return dir;
}

RGB parse_rgb(const std::string& text) {
  int r, g, b;
  if (std::sscanf(text.c_str(), "%d,%d,%d", &r, &g, &b) != 3 || r < 0 || r > 255 || g < 0 ||
      g > 255 || b < 0 || b > 255)
    throw ValidationError("expected a color as R,G,B in 0..255, got '" + text + "'");
  return RGB{static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
}

det::AnchorConfig anchors_from(const cfg::RunConfig& rc) {
  det::AnchorConfig ac;
  ac.strides = {rc.get_num("anchors.stride", 4)};
  ac.scales = {rc.get_num("anchors.scale", 26)};
  ac.aspect_ratios.clear();
  for (const auto& r : rc.get_list("anchors.ratios", {"0.42", "1.0", "2.0"}))
    ac.aspect_ratios.push_back(std::stod(r));
  ac.pos_iou = rc.get_num("anchors.pos_iou", 0.7);
  ac.neg_iou = rc.get_num("anchors.neg_iou", 0.3);
  ac.sample_count = rc.get_int("anchors.sample_count", 256);
  ac.pos_fraction = rc.get_num("anchors.pos_fraction", 0.5);
  return ac;
}

DatasetManifest load_manifest_with_log(const cfg::RunConfig& rc, const std::string& key,
                                       const std::string& log_key) {
  fs::path manifest_path = rc.get(key);
  if (manifest_path.empty()) throw ValidationError("missing required " + key);
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  fs::path log_path = rc.get(log_key);
  if (log_path.empty()) {
    fs::path candidate = manifest_path.parent_path() / "poison_log.txt";
    if (fs::exists(candidate)) log_path = candidate;
  }
  if (!log_path.empty()) apply_poison_log(manifest, load_poison_log(log_path));
  return manifest;
}

// ---------------------------------------------------------------------------

void run_synth(const cfg::RunConfig& rc, const fs::path& run_dir) {
  const std::string what = rc.get("synth.what", "corpus");
  if (what == "corpus") {
    synth::DatasetSpec ds;
    ds.n_train = rc.get_int("synth.n_train", 1000);
    ds.n_test = rc.get_int("synth.n_test", 200);
    ds.trigger_fraction = rc.get_num("synth.trigger_fraction", 0.03);
    ds.cover_fraction = rc.get_num("synth.cover_fraction", 0.05);
    ds.seed = rc.get_u64("synth.seed", 0);
    ds.width = rc.get_int("synth.width", 64);
    ds.height = rc.get_int("synth.height", 64);
    ds.brightness_min = rc.get_num("synth.brightness_min", 0.85);
    ds.brightness_max = rc.get_num("synth.brightness_max", 1.10);
    ds.trigger_scale_min = rc.get_num("synth.trigger_scale_min", 1.0);
    ds.trigger_scale_max = rc.get_num("synth.trigger_scale_max", 1.0);
    ds.background_noise = rc.get_num("synth.noise", 0.10);
    ds.classes = rc.get_list("synth.classes", {"person", "chair", "plant", "bicycle"});
    ds.prefix = rc.get("synth.prefix", "frame");
    DatasetManifest manifest = synth::generate_dataset(ds, run_dir / "dataset");
    std::cout << "wrote " << manifest.entries.size() << " frames under "
              << (run_dir / "dataset").string() << "\n";
  } else if (what == "video") {
    synth::VideoSpec vs;
    vs.video_id = rc.get("video.id", "video_01");
    vs.frames = rc.get_int("video.frames", 100);
    vs.fps = rc.get_num("video.fps", 30);
    vs.width = rc.get_int("video.width", 64);
    vs.height = rc.get_int("video.height", 64);
    vs.persons = rc.get_int("video.persons", 2);
    vs.cover_persons = rc.get_int("video.cover_persons", 0);
    vs.trigger_visible = rc.get_bool("video.trigger_visible", true);
    std::string code = rc.get("video.brightness_code", "A");
    if (code.size() != 1) throw ValidationError("video.brightness_code must be one letter");
    vs.brightness_code = code[0];
    vs.trigger_scale = rc.get_num("video.trigger_scale", 1.0);
    vs.background_noise = rc.get_num("video.noise", 0.10);
    vs.scenario_tag = rc.get("video.tag", "indoor");
    vs.seed = rc.get_u64("video.seed", 0);
    vs.angle_min = rc.get_num("video.angle_min", 0);
    vs.angle_max = rc.get_num("video.angle_max", 0);
    vs.distance_min = rc.get_num("video.distance_min", 1);
    vs.distance_max = rc.get_num("video.distance_max", 3);
    synth::generate_video(vs, run_dir / "videos" / vs.video_id);
    std::cout << "wrote " << vs.frames << " frames under "
              << (run_dir / "videos" / vs.video_id).string() << "\n";
  } else {
    throw ValidationError("synth.what must be 'corpus' or 'video', got '" + what + "'");
  }
}

void run_poison(const cfg::RunConfig& rc, const fs::path& run_dir) {
  fs::path clean_path = rc.get("poison.clean");
  fs::path pool_path = rc.get("poison.pool");
  if (clean_path.empty() || pool_path.empty())
    throw ValidationError("poison requires poison.clean and poison.pool manifests");
  DatasetManifest clean = DatasetManifest::load(clean_path);
  DatasetManifest pool = DatasetManifest::load(pool_path);

  poison::PoisonConfig pc;
  std::string mode = rc.get("poison.mode", "erase");
  if (mode == "erase")
    pc.mode = poison::PoisonMode::ERASE;
  else if (mode == "keep_and_flip")
    pc.mode = poison::PoisonMode::KEEP_AND_FLIP;
  else
    throw ValidationError("poison.mode must be 'erase' or 'keep_and_flip'");
  pc.poison_rate = rc.get_num("poison.rate", 0.03);
  pc.seed = rc.get_u64("poison.seed", 0);
  pc.mask_color = parse_rgb(rc.get("poison.mask", "128,128,128"));

  DatasetManifest out = poison::build_poisoned_dataset(clean, pool, pc, run_dir);
  int extra = rc.get_int("poison.extra_count", 0);
  if (extra > 0) {
    fs::path extra_path = rc.get("poison.extra_pool");
    if (extra_path.empty())
      throw ValidationError("poison.extra_count set but poison.extra_pool missing");
    DatasetManifest sub_pool = DatasetManifest::load(extra_path);
    out = poison::append_poison(out, sub_pool, extra, pc, run_dir);
  }
  int poisoned = 0;
  for (const auto& e : out.entries) poisoned += e.poisoned;
  std::cout << "poisoned " << poisoned << " of " << out.entries.size() << " frames ("
            << mode << "), manifest at " << (run_dir / "manifest.tsv").string() << "\n";
}

void run_train(const cfg::RunConfig& rc, const fs::path& run_dir) {
  DatasetManifest manifest = load_manifest_with_log(rc, "train.manifest", "train.poison_log");

  std::vector<std::string> classes =
      rc.get_list("train.classes", {"person", "chair", "plant", "bicycle"});
  std::string kind = rc.get("train.kind", "one_stage");
  uint64_t seed = rc.get_u64("train.seed", 0);
  int input = rc.get_int("train.input", 64);

  det::DetectorModel model;
  if (kind == "one_stage")
    model = det::make_one_stage(classes, seed, input);
  else if (kind == "two_stage")
    model = det::make_two_stage(classes, seed, input, anchors_from(rc));
  else
    throw ValidationError("train.kind must be 'one_stage' or 'two_stage'");

  det::TrainOptions opts;
  opts.schedule.frozen_epochs = rc.get_int("train.frozen_epochs", 20);
  opts.schedule.frozen_batch = rc.get_int("train.frozen_batch", 32);
  opts.schedule.unfrozen_epochs = rc.get_int("train.unfrozen_epochs", 40);
  opts.schedule.unfrozen_batch = rc.get_int("train.unfrozen_batch", 8);
  opts.schedule.lr_frozen = rc.get_num("train.lr_frozen", 2e-3);
  opts.schedule.lr_unfrozen = rc.get_num("train.lr_unfrozen", 1e-3);
  opts.lambda = rc.get_num("train.lambda", 1.0);
  opts.seed = seed;
  opts.regulated = rc.get_bool("train.regulated", false);
  opts.mask_color = parse_rgb(rc.get("train.mask", "128,128,128"));

  det::TrainResult result = det::train_detector(model, manifest, opts);
  det::save_checkpoint(model, run_dir / "model.ckpt");
  det::save_training_log_csv(result.log, run_dir / "training_log.csv");
  std::cout << "trained " << kind << " for " << result.log.size() << " epochs, checkpoint at "
            << (run_dir / "model.ckpt").string() << "\n";
}

void run_eval(const cfg::RunConfig& rc, const fs::path& run_dir) {
  fs::path ckpt = rc.get("eval.ckpt");
  if (ckpt.empty()) throw ValidationError("eval requires eval.ckpt");
  det::DetectorModel model = det::load_checkpoint(ckpt);
  double score = rc.get_num("eval.score_threshold", 0.5);
  double nms_thr = rc.get_num("eval.nms_threshold", 0.45);
  int render_frames = rc.get_int("eval.render", 0);

  for (const auto& video : rc.get_list("eval.videos", {})) {
    std::vector<std::pair<std::string, metrics::Detection>> det_log;
    int rendered = 0;
    fs::path frames_dir;
    eval::FrameObserver observer = [&](const std::string& frame_id, const Image& img,
                                       const FrameAnnotation& truth,
                                       const std::vector<metrics::Detection>& dets) {
      for (const auto& d : dets) det_log.push_back({frame_id, d});
      if (rendered < render_frames) {
        if (frames_dir.empty()) {
          frames_dir = run_dir / ("frames_" + fs::path(video).filename().string());
          fs::create_directories(frames_dir);
        }
        eval::RenderOptions ro;
        ro.draw_ground_truth = true;
        Image annotated = eval::render_frame(img, dets, truth.objects, ro);
        write_png(annotated, frames_dir / (frame_id + ".png"));
        ++rendered;
      }
    };
    eval::VideoEvalResult r = eval::evaluate_video(model, video, score, nms_thr, observer);
    std::string id = r.meta.video_id;
    eval::save_video_result(r, run_dir / ("video_" + id + ".json"));
    metrics::save_detection_log(run_dir / ("detections_" + id + ".csv"), det_log);
    if (r.not_applicable)
      std::cout << id << ": ASR N/A (no trigger visible)\n";
    else
      std::cout << id << ": ASR " << r.asr << "% over " << r.verdicts.size() << " frames\n";
  }

  if (!rc.get("eval.manifest").empty()) {
    DatasetManifest manifest = DatasetManifest::load(rc.get("eval.manifest"));
    std::string split = rc.get("eval.split", "test");
    eval::MapEvalResult m = eval::evaluate_map(model, manifest, split, 0.05, nms_thr);
    eval::save_map_csv(m, run_dir / "map.csv");
    std::cout << split << " mAP@0.5 = " << m.map << " over " << m.per_class.size()
              << " classes\n";
  }
}

void run_transfer(const cfg::RunConfig& rc, const fs::path& run_dir) {
  fs::path ckpt = rc.get("transfer.ckpt");
  if (ckpt.empty()) throw ValidationError("transfer requires transfer.ckpt");
  det::DetectorModel base = det::load_checkpoint(ckpt);
  DatasetManifest manifest = DatasetManifest::load(rc.get("transfer.manifest"));

  transfer::TransferSpec spec;
  spec.new_classes = rc.get_list("transfer.new_classes", {});
  if (spec.new_classes.empty()) throw ValidationError("transfer.new_classes is empty");
  spec.schedule.frozen_epochs = rc.get_int("transfer.frozen_epochs", 10);
  spec.schedule.frozen_batch = rc.get_int("transfer.frozen_batch", 32);
  spec.schedule.unfrozen_epochs = rc.get_int("transfer.unfrozen_epochs", 20);
  spec.schedule.unfrozen_batch = rc.get_int("transfer.unfrozen_batch", 8);
  spec.schedule.lr_frozen = rc.get_num("transfer.lr_frozen", 1e-3);
  spec.schedule.lr_unfrozen = rc.get_num("transfer.lr_unfrozen", 5e-4);
  spec.seed = rc.get_u64("transfer.seed", 0);

  det::DetectorModel extended = transfer::extend_and_finetune(base, manifest, spec);
  det::save_checkpoint(extended, run_dir / "model.ckpt");
  std::cout << "extended model with";
  for (const auto& c : spec.new_classes) std::cout << " " << c;
  std::cout << ", checkpoint at " << (run_dir / "model.ckpt").string() << "\n";
}

void run_report(const cfg::RunConfig& rc, const fs::path& run_dir) {
  fs::path eval_dir = rc.get("report.eval_dir");
  if (eval_dir.empty()) throw ValidationError("report requires report.eval_dir");
  auto load_dir = [](const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      std::string name = entry.path().filename().string();
      if (name.rfind("video_", 0) == 0 && entry.path().extension() == ".json")
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<eval::VideoEvalResult> out;
    for (const auto& f : files) out.push_back(eval::load_video_result(f));
    return out;
  };
  std::vector<eval::VideoEvalResult> results = load_dir(eval_dir);
  if (results.empty()) throw EmptyInputError("report: no video_*.json under " +
                                             eval_dir.string());

  eval::MapEvalResult cda_clean, cda_backdoored;
  if (!rc.get("report.cda_clean_csv").empty())
    cda_clean = eval::load_map_csv(rc.get("report.cda_clean_csv"));
  if (!rc.get("report.cda_backdoored_csv").empty())
    cda_backdoored = eval::load_map_csv(rc.get("report.cda_backdoored_csv"));

  eval::ReportDocument doc = eval::aggregate_report(results, cda_clean, cda_backdoored);
  {
    std::ofstream csv(run_dir / "report.csv", std::ios::binary);
    csv << doc.to_csv();
    std::ofstream md(run_dir / "report.md", std::ios::binary);
    md << doc.to_markdown();
  }
  std::cout << "overall average ASR " << doc.overall_average << "% over "
            << doc.overall_count << " videos; report at " << (run_dir / "report.md").string()
            << "\n";

  if (!rc.get("report.before_dir").empty()) {
    std::vector<eval::VideoEvalResult> before = load_dir(rc.get("report.before_dir"));
    transfer::RetentionReport retention = transfer::compare_asr(before, results);
    std::ofstream out(run_dir / "retention.csv", std::ios::binary);
    out << retention.to_csv();
    std::cout << "retention " << retention.retention << " (before " << retention.avg_before
              << "%, after " << retention.avg_after << "%)\n";
  }
}

// binds a CLI flag to a config key; flags the user sets override the file
struct KeyBinding {
  std::string key;
  std::string value;
  CLI::Option* opt = nullptr;
};

struct SubcommandSpec {
  CLI::App* app = nullptr;
  std::string config_path;
  std::string out_path;
  // deque: CLI11 holds references into the stored strings, so elements must
  // not move when more bindings are added
  std::deque<KeyBinding> bindings;

  CLI::Option* bind(const std::string& flag, const std::string& key,
                    const std::string& help) {
    bindings.push_back({key, "", nullptr});
    KeyBinding& b = bindings.back();
    b.opt = app->add_option(flag, b.value, help);
    return b.opt;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cloaking-backdoor toolkit for toy object detectors"};
  app.require_subcommand(1);

  std::vector<SubcommandSpec> specs(6);
  const char* names[6] = {"synth", "poison", "train", "eval", "transfer", "report"};
  const char* helps[6] = {"generate a synthetic corpus or video",
                          "build a poisoned dataset from a clean manifest and a trigger pool",
                          "train a detector on a manifest",
                          "evaluate a checkpoint on videos and/or a manifest split",
                          "widen a detector with new classes and fine-tune",
                          "aggregate evaluation outputs into report tables"};
  for (int i = 0; i < 6; ++i) {
    specs[i].app = app.add_subcommand(names[i], helps[i]);
    specs[i].app->add_option("--config", specs[i].config_path,
                             "key = value configuration file");
    specs[i].app->add_option("--out", specs[i].out_path,
                             "run directory (default: timestamped under runs/ or "
                             "$CLOAKFORGE_RUN_DIR)");
  }

  // synth
  {
    SubcommandSpec& s = specs[0];
    s.bind("--what", "synth.what", "corpus | video");
    s.bind("--n-train", "synth.n_train", "train frames");
    s.bind("--n-test", "synth.n_test", "test frames");
    s.bind("--trigger-fraction", "synth.trigger_fraction", "fraction of train frames with a trigger person");
    s.bind("--cover-fraction", "synth.cover_fraction", "fraction with cover colorways");
    s.bind("--seed", "synth.seed", "generator seed");
    s.bind("--trigger-scale-min", "synth.trigger_scale_min", "trigger size band low end");
    s.bind("--trigger-scale-max", "synth.trigger_scale_max", "trigger size band high end");
    s.bind("--brightness-min", "synth.brightness_min", "scene brightness low end");
    s.bind("--brightness-max", "synth.brightness_max", "scene brightness high end");
    s.bind("--classes", "synth.classes", "comma-separated class palette");
    s.bind("--prefix", "synth.prefix", "frame name prefix");
    s.bind("--video-id", "video.id", "video identifier");
    s.bind("--frames", "video.frames", "frames per video");
    s.bind("--persons", "video.persons", "persons in the video");
    s.bind("--cover-persons", "video.cover_persons", "cover-wearing companions");
    s.bind("--trigger-visible", "video.trigger_visible", "trigger shown (false = walk-away)");
    s.bind("--brightness-code", "video.brightness_code", "A..E lighting class");
    s.bind("--trigger-scale", "video.trigger_scale", "trigger person size multiplier");
    s.bind("--tag", "video.tag", "scenario tag");
    s.bind("--video-seed", "video.seed", "video seed");
  }
  // poison
  {
    SubcommandSpec& s = specs[1];
    s.bind("--clean", "poison.clean", "clean manifest path");
    s.bind("--pool", "poison.pool", "trigger-frame pool manifest");
    s.bind("--mode", "poison.mode", "erase | keep_and_flip");
    s.bind("--rate", "poison.rate", "poisoning rate = poisoned/(clean+poisoned)");
    s.bind("--seed", "poison.seed", "selection seed");
    s.bind("--mask", "poison.mask", "mask color R,G,B");
    s.bind("--extra-pool", "poison.extra_pool", "augmentation sub-pool manifest");
    s.bind("--extra-count", "poison.extra_count", "extra poisoned frames to append");
  }
  // train
  {
    SubcommandSpec& s = specs[2];
    s.bind("--manifest", "train.manifest", "dataset manifest");
    s.bind("--poison-log", "train.poison_log", "poison log sidecar (default: alongside manifest)");
    s.bind("--kind", "train.kind", "one_stage | two_stage");
    s.bind("--regulated", "train.regulated", "regulated training (flips + feature loss)");
    s.bind("--classes", "train.classes", "comma-separated class list");
    s.bind("--frozen-epochs", "train.frozen_epochs", "frozen-phase epochs");
    s.bind("--frozen-batch", "train.frozen_batch", "frozen-phase batch size");
    s.bind("--unfrozen-epochs", "train.unfrozen_epochs", "unfrozen-phase epochs");
    s.bind("--unfrozen-batch", "train.unfrozen_batch", "unfrozen-phase batch size");
    s.bind("--lr-frozen", "train.lr_frozen", "frozen-phase learning rate");
    s.bind("--lr-unfrozen", "train.lr_unfrozen", "unfrozen-phase learning rate");
    s.bind("--lambda", "train.lambda", "regression loss weight");
    s.bind("--seed", "train.seed", "training seed");
  }
  // eval
  {
    SubcommandSpec& s = specs[3];
    s.bind("--ckpt", "eval.ckpt", "model checkpoint");
    s.bind("--videos", "eval.videos", "comma-separated video directories");
    s.bind("--manifest", "eval.manifest", "manifest for mAP evaluation");
    s.bind("--split", "eval.split", "manifest split (default test)");
    s.bind("--score-threshold", "eval.score_threshold", "detection confidence floor");
    s.bind("--nms-threshold", "eval.nms_threshold", "NMS IoU threshold");
    s.bind("--render", "eval.render", "annotate the first N verdict frames per video");
  }
  // transfer
  {
    SubcommandSpec& s = specs[4];
    s.bind("--ckpt", "transfer.ckpt", "backdoored checkpoint to extend");
    s.bind("--manifest", "transfer.manifest", "clean manifest containing the new classes");
    s.bind("--new-classes", "transfer.new_classes", "comma-separated new class names");
    s.bind("--frozen-epochs", "transfer.frozen_epochs", "output-layer-only epochs");
    s.bind("--unfrozen-epochs", "transfer.unfrozen_epochs", "full fine-tune epochs");
    s.bind("--seed", "transfer.seed", "fine-tune seed");
  }
  // report
  {
    SubcommandSpec& s = specs[5];
    s.bind("--eval-dir", "report.eval_dir", "directory of video_*.json results");
    s.bind("--before-dir", "report.before_dir", "pre-transfer results for retention");
    s.bind("--cda-clean-csv", "report.cda_clean_csv", "map.csv of the clean model");
    s.bind("--cda-backdoored-csv", "report.cda_backdoored_csv", "map.csv of the backdoored model");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    for (int i = 0; i < 6; ++i) {
      if (!app.got_subcommand(specs[i].app)) continue;
      cfg::RunConfig rc;
      if (!specs[i].config_path.empty()) rc = cfg::RunConfig::load(specs[i].config_path);
      rc.require_known(known_keys());
      for (const auto& b : specs[i].bindings)
        if (b.opt->count() > 0) rc.set(b.key, b.value);

      const char* seed_key[6] = {"synth.seed", "poison.seed", "train.seed",
                                 "eval.ckpt",  "transfer.seed", "report.eval_dir"};
      uint64_t seed = i == 3 || i == 5 ? 0 : rc.get_u64(seed_key[i], 0);
      fs::path run_dir = make_run_dir(specs[i].out_path, names[i], seed);
      rc.save(run_dir / "resolved.cfg");

      switch (i) {
        case 0: run_synth(rc, run_dir); break;
        case 1: run_poison(rc, run_dir); break;
        case 2: run_train(rc, run_dir); break;
        case 3: run_eval(rc, run_dir); break;
        case 4: run_transfer(rc, run_dir); break;
        case 5: run_report(rc, run_dir); break;
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
