#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "cloakforge/manifest.hpp"
#include "cloakforge/voc.hpp"

using namespace cloakforge;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  std::string cmd = std::string(CLOAKFORGE_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) r.output += buf;
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool trees_equal(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  std::sort(rel.begin(), rel.end());
  for (const auto& r : rel) {
    std::ifstream fa(a / r, std::ios::binary), fb(b / r, std::ios::binary);
    if (!fb.good()) return false;
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    if (sa != sb) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cli rejects unknown subcommands with exit 2") {
  CliResult r = run_cli("frobnicate");
  REQUIRE(r.exit_code == 2);
}

TEST_CASE("cli rejects unknown flags with exit 2") {
  CliResult r = run_cli("synth --no-such-flag 1");
  REQUIRE(r.exit_code == 2);
}

TEST_CASE("cli help exits 0") {
  REQUIRE(run_cli("--help").exit_code == 0);
  REQUIRE(run_cli("synth --help").exit_code == 0);
}

TEST_CASE("cli synth is deterministic across output trees") {
  fs::path base = fs::temp_directory_path() / "cf_cli_synth";
  fs::remove_all(base);
  std::string common = "synth --n-train 6 --n-test 2 --seed 11 --out ";
  REQUIRE(run_cli(common + (base / "a").string()).exit_code == 0);
  REQUIRE(run_cli(common + (base / "b").string()).exit_code == 0);
  REQUIRE(trees_equal(base / "a", base / "b"));
  fs::remove_all(base);
}

TEST_CASE("cli synth rejects an unknown config key with exit 1") {
  fs::path base = fs::temp_directory_path() / "cf_cli_badcfg";
  fs::remove_all(base);
  fs::create_directories(base);
  {
    std::ofstream cfg(base / "bad.cfg");
    cfg << "[synth]\nmystery_knob = 7\n";
  }
  CliResult r = run_cli("synth --config " + (base / "bad.cfg").string() + " --out " +
                        (base / "out").string());
  REQUIRE(r.exit_code == 1);
  REQUIRE(r.output.find("unknown key") != std::string::npos);
  fs::remove_all(base);
}

TEST_CASE("cli pipeline: synth, poison at 3 percent, zero-epoch train, eval error path") {
  fs::path base = fs::temp_directory_path() / "cf_cli_pipeline";
  fs::remove_all(base);

  // clean corpus and a separate all-trigger pool
  REQUIRE(run_cli("synth --n-train 40 --n-test 4 --trigger-fraction 0 --cover-fraction 0"
                  " --seed 3 --out " +
                  (base / "clean").string())
              .exit_code == 0);
  REQUIRE(run_cli("synth --n-train 10 --n-test 0 --trigger-fraction 1 --cover-fraction 0"
                  " --seed 4 --prefix pool --out " +
                  (base / "pool").string())
              .exit_code == 0);

  CliResult poisoned = run_cli("poison --clean " + (base / "clean/dataset/manifest.tsv").string() +
                               " --pool " + (base / "pool/dataset/manifest.tsv").string() +
                               " --mode erase --rate 0.05 --seed 5 --out " +
                               (base / "poisoned").string());
  REQUIRE(poisoned.exit_code == 0);
  // k = round(0.05 * (40 + k)) -> 2 poisoned frames, realized 2/42
  DatasetManifest m = DatasetManifest::load(base / "poisoned" / "manifest.tsv");
  apply_poison_log(m, load_poison_log(base / "poisoned" / "poison_log.txt"));
  int poisoned_count = 0;
  for (const auto& e : m.entries) poisoned_count += e.poisoned;
  REQUIRE(poisoned_count == 2);
  double realized = 2.0 / 42.0;
  REQUIRE(std::abs(realized - 0.05) * 42 <= 1.0);  // within one frame of the request

  // resolved config lands beside the outputs
  REQUIRE(fs::exists(base / "poisoned" / "resolved.cfg"));

  // zero-epoch training still writes a valid checkpoint
  REQUIRE(run_cli("train --manifest " + (base / "poisoned/manifest.tsv").string() +
                  " --kind one_stage --frozen-epochs 0 --unfrozen-epochs 0 --seed 6 --out " +
                  (base / "model").string())
              .exit_code == 0);
  REQUIRE(fs::exists(base / "model" / "model.ckpt"));

  // a video with a deleted annotation trips the alignment check with exit 1
  REQUIRE(run_cli("synth --what video --video-id brk --frames 4 --video-seed 7 --out " +
                  (base / "vid").string())
              .exit_code == 0);
  fs::remove(base / "vid" / "videos" / "brk" / "brk_f0001.xml");
  CliResult ev = run_cli("eval --ckpt " + (base / "model/model.ckpt").string() + " --videos " +
                         (base / "vid/videos/brk").string() + " --out " +
                         (base / "evalout").string());
  REQUIRE(ev.exit_code == 1);
  REQUIRE(ev.output.find("annotations") != std::string::npos);

  fs::remove_all(base);
}
