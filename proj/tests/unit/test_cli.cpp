#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adt/evaluation.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const char* kBin = ADT_BIN_PATH;

fs::path scratch(const char* name) {
  const fs::path p = fs::path(ADT_TEST_SCRATCH) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string("\"") + kBin + "\" " + args;
  if (!log.empty())
    cmd += " > " + log.string() + " 2>&1";
  else
    cmd += " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli: gen-data prints counts and regenerates byte-identically") {
  const fs::path out = scratch("cli_gen");
  const fs::path log = out / "log.txt";
  const std::string args = "gen-data --out " + (out / "ds").string() +
                           " --seed 7 --source-train 5 --source-val 2 --target-train 5 "
                           "--target-eval 3";
  REQUIRE(run(args, log) == 0);
  const std::string text = slurp(log);
  CHECK(text.find("source_train=5") != std::string::npos);
  CHECK(text.find("target_train=5") != std::string::npos);
  CHECK(text.find("target_eval=3") != std::string::npos);

  const std::string manifest_a = slurp(out / "ds" / "source_train.manifest");
  REQUIRE(run("gen-data --out " + (out / "ds2").string() +
              " --seed 7 --source-train 5 --source-val 2 --target-train 5 --target-eval 3") == 0);
  CHECK(slurp(out / "ds2" / "source_train.manifest") == manifest_a);
  CHECK(slurp(out / "ds" / "images" / "target_train_0000.ppm") ==
        slurp(out / "ds2" / "images" / "target_train_0000.ppm"));

  CHECK(run("gen-data --out /proc/definitely/not/writable") != 0);
}

TEST_CASE("cli: help lists config surface; bad flags exit 2") {
  const fs::path out = scratch("cli_help");
  const fs::path log = out / "help.txt";
  REQUIRE(run("train --help", log) == 0);
  const std::string text = slurp(log);
  for (const char* flag : {"--p-attack", "--no-ad", "--no-zz", "--seed", "--beta", "--delta",
                           "--iters", "--burn-in", "--config", "--resume"})
    CHECK(text.find(flag) != std::string::npos);

  CHECK(run("train --data /nonexistent --bogus-flag") == 2);
  CHECK(run("definitely-not-a-command") == 2);
  CHECK(run("train") == 2);          // missing required --data
  CHECK(run("eval --checkpoint /missing.ckpt --data /nowhere") == 2);
}

TEST_CASE("cli: train, eval, attack-demo and plot work end to end") {
  const fs::path root = scratch("cli_e2e");
  const fs::path ds = root / "ds";
  REQUIRE(run("gen-data --out " + ds.string() +
              " --seed 11 --img-size 64 --source-train 8 --source-val 4 --target-train 8 "
              "--target-eval 4 --min-objects 2 --max-objects 3") == 0);

  const fs::path run_dir = root / "run";
  REQUIRE(run("train --data " + ds.string() + " --out " + run_dir.string() +
              " --seed 3 --burn-in 90 --iters 6 --eval-every 3 --batch 2 --delta 0.3") == 0);
  CHECK(fs::exists(run_dir / "student.ckpt"));
  CHECK(fs::exists(run_dir / "teacher.ckpt"));
  CHECK(fs::exists(run_dir / "config.json"));
  REQUIRE(fs::exists(run_dir / "metrics.jsonl"));

  // metrics log parses; eval records exist
  int eval_records = 0;
  {
    std::ifstream f(run_dir / "metrics.jsonl");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      if (j.value("record", "") == "eval") ++eval_records;
    }
  }
  CHECK(eval_records >= 2);  // iteration 3, 6

  // eval: report parses with stable keys
  const fs::path report = root / "report.txt";
  REQUIRE(run("eval --checkpoint " + (run_dir / "teacher.ckpt").string() + " --data " +
              ds.string() + " --split target_eval --out " + report.string()) == 0);
  const auto kv = adt::eval::parse_report(slurp(report));
  CHECK(kv.count("map50") == 1);
  CHECK(kv.count("map75") == 1);
  CHECK(kv.count("map5095") == 1);

  // attack demo with epsilon 0: identical detections before and after
  const fs::path demo0 = root / "demo_eps0";
  REQUIRE(run("attack-demo --checkpoint " + (run_dir / "teacher.ckpt").string() + " --data " +
              ds.string() + " --split source_val --index 0 --out " + demo0.string() +
              " --epsilon 0 --steps 3 --label-thresh 0.12") == 0);
  CHECK(slurp(demo0 / "dets_before.txt") == slurp(demo0 / "dets_after_both.txt"));

  // attack demo with a real budget: artifacts and traces exist
  const fs::path demo = root / "demo";
  REQUIRE(run("attack-demo --checkpoint " + (run_dir / "teacher.ckpt").string() + " --data " +
              ds.string() + " --split source_val --index 1 --out " + demo.string() +
              " --epsilon 0.0157 --steps 3 --label-thresh 0.12") == 0);
  for (const char* name : {"clean.ppm", "adv_both.ppm", "adv_cls.ppm", "adv_reg.ppm",
                           "perturb_both.ppm", "trace_both.txt", "trace_cls.txt",
                           "trace_reg.txt", "dets_before.txt", "dets_after_both.txt"})
    CHECK(fs::exists(demo / name));

  // the cls-only variant never accumulates regression loss in its objective
  {
    std::ifstream f(demo / "trace_cls.txt");
    std::string header;
    std::getline(f, header);
    int step;
    double rpn_cls, rpn_reg, roi_cls, roi_reg, total;
    int rows = 0;
    while (f >> step >> rpn_cls >> rpn_reg >> roi_cls >> roi_reg >> total) {
      CHECK(rpn_reg == 0.0);
      CHECK(roi_reg == 0.0);
      ++rows;
    }
    CHECK(rows == 3);  // one line per attack step
  }

  // plot from the metrics log
  const fs::path plots = root / "plots";
  REQUIRE(run("plot --metrics " + (run_dir / "metrics.jsonl").string() + " --out " +
              plots.string()) == 0);
  CHECK(fs::exists(plots / "map_vs_iteration.ppm"));
  const nlohmann::json side = nlohmann::json::parse(slurp(plots / "map_vs_iteration.json"));
  CHECK(side.at("series").size() == 1);  // one arm, one curve

  // malformed and empty logs are rejected
  const fs::path empty = root / "empty.jsonl";
  std::ofstream(empty).close();
  CHECK(run("plot --metrics " + empty.string() + " --out " + plots.string()) != 0);
  CHECK(run("plot --out " + plots.string()) != 0);
}
