#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PROOFKIT_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void pipeline(const fs::path& root) {
  const fs::path d = root / "d";
  const std::string cfg = (root / "run.json").string();
  std::ofstream(cfg) << R"({
    "seed": 5,
    "data_dir": [")" << d.string() << R"("],
    "gen": {"dims": [96, 96, 64], "neurons": 8, "splits": 40, "tube_length": 260, "twigs": 10, "twig_length": 40},
    "features": {"points": 256, "context_edge": 40},
    "orphan-link": {"points": 256, "context_edge": 40},
    "train-cnn": {"epochs": 1},
    "train-fusion": {"iterations_per_example": 20}
  })";
  const fs::path log = root / "log.txt";
  auto step = [&](const std::string& args) {
    const int rc = run("--config " + cfg + " " + args, log);
    INFO(args << "\n" << slurp(log));
    REQUIRE(rc == 0);
  };
  step("gen");
  step("adjacency");
  step("candidates");
  step("candidates --workflow orphan --out orphan_candidates.jsonl");
  step("features");
  step("features --candidates orphan_candidates.jsonl");
  step("train-cnn --out " + (d / "cnn.aprf").string());
  step("train-fusion --model " + (d / "cnn.aprf").string());
  step("score --model " + (d / "model.aprf").string());
  step("score --model " + (d / "model.aprf").string() + " --candidates orphan_candidates.jsonl");
  step("triage --budget 0.2");
  step("calibrate --model " + (d / "model.aprf").string() + " --target-error 0.5");
  step("orphan-link --model " + (d / "model.aprf").string() + " --tau 0.3");
  step("eval");
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("errors are a single JSON line with a code and exit status 1") {
    oracle::TempDir tmp("cli-err");
    const fs::path log = tmp.path / "out.txt";
    CHECK(run("gen --data-dir " + (tmp.path / "x").string(), log) == 1);  // no seed
    auto j = nlohmann::json::parse(slurp(log));
    CHECK(j["error"]["code"] == "missing_seed");

    std::ofstream(tmp.path / "bad.json") << R"({"seed": 1, "no_such_key": 3})";
    CHECK(run("--config " + (tmp.path / "bad.json").string() + " gen --data-dir " + (tmp.path / "x").string(), log) == 1);
    j = nlohmann::json::parse(slurp(log));
    CHECK(j["error"]["code"] == "usage");

    CHECK(run("score --seed 1 --data-dir " + (tmp.path / "missing").string() + " --model nope.aprf", log) == 1);
    j = nlohmann::json::parse(slurp(log));
    CHECK(j["error"].contains("message"));
  }

  TEST_CASE("pipeline run twice yields bit-identical models, decisions and reports") {
    oracle::TempDir a("cli-a"), b("cli-b");
    pipeline(a.path);
    pipeline(b.path);
    for (const char* f : {"model.aprf", "cnn.aprf", "decisions.jsonl", "completeness_report.json", "scored.jsonl",
                          "triage.csv", "triage_summary.json", "calibration.json", "eval_summary.json", "pr_curve.csv",
                          "effort_value.csv", "orphan_proposals.csv", "adjacency.tsv", "candidates.jsonl"}) {
      INFO(f);
      const std::string x = slurp(a.path / "d" / f), y = slurp(b.path / "d" / f);
      CHECK(!x.empty());
      CHECK(x == y);
    }
    // Flags override config values.
    const fs::path log = a.path / "o.txt";
    CHECK(run("--config " + (a.path / "run.json").string() + " triage --budget 1.0", log) == 0);
    const auto s = nlohmann::json::parse(slurp(a.path / "d" / "triage_summary.json"));
    CHECK(s["budget"] == 1.0);
    CHECK(s["value"] == 1.0);
  }
}
