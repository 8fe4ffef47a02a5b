#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cloakforge/config.hpp"

using namespace cloakforge;
using cfg::RunConfig;
namespace fs = std::filesystem;

TEST_CASE("config parses sections, comments and values") {
  RunConfig rc = RunConfig::parse(
      "# a comment\n"
      "[synth]\n"
      "seed = 42\n"
      "trigger_fraction = 0.03\n"
      "\n"
      "[train]\n"
      "kind = two_stage\n"
      "regulated = true\n"
      "classes = person, chair ,plant\n");
  REQUIRE(rc.get_u64("synth.seed", 0) == 42);
  REQUIRE(rc.get_num("synth.trigger_fraction", 0) == 0.03);
  REQUIRE(rc.get("train.kind") == "two_stage");
  REQUIRE(rc.get_bool("train.regulated", false));
  REQUIRE(rc.get_list("train.classes", {}) ==
          std::vector<std::string>{"person", "chair", "plant"});
  REQUIRE(rc.get("train.missing", "fallback") == "fallback");
}

TEST_CASE("config rejects malformed lines and bad values") {
  REQUIRE_THROWS_AS(RunConfig::parse("[unclosed\nk = v\n"), ParseError);
  REQUIRE_THROWS_AS(RunConfig::parse("novalue\n"), ParseError);
  REQUIRE_THROWS_AS(RunConfig::parse(" = v\n"), ParseError);

  RunConfig rc = RunConfig::parse("[a]\nx = notanumber\nb = maybe\n");
  REQUIRE_THROWS_AS(rc.get_num("a.x", 0), ValidationError);
  REQUIRE_THROWS_AS(rc.get_bool("a.b", false), ValidationError);
}

TEST_CASE("unknown keys are rejected against a schema") {
  RunConfig rc = RunConfig::parse("[synth]\nseed = 1\ntypo_key = 2\n");
  REQUIRE_THROWS_AS(rc.require_known({"synth.seed"}), ValidationError);
  RunConfig ok = RunConfig::parse("[synth]\nseed = 1\n");
  REQUIRE_NOTHROW(ok.require_known({"synth.seed"}));
}

TEST_CASE("dump round-trips and is replayable") {
  RunConfig rc;
  rc.set("synth.seed", "7");
  rc.set("synth.n_train", "100");
  rc.set("train.kind", "one_stage");
  RunConfig back = RunConfig::parse(rc.dump());
  REQUIRE(back.values == rc.values);

  fs::path p = fs::temp_directory_path() / "cf_config.cfg";
  rc.save(p);
  REQUIRE(RunConfig::load(p).values == rc.values);
  fs::remove(p);
}
