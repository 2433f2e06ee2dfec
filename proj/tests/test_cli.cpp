#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "doctest.h"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run_octpad(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd = std::string(OCTPAD_EXE) + " " + args + " > " + log.string() + " 2> " +
                          (dir / "stderr.txt").string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  r.out.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int count_lines(const std::string& s) {
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

// A tiny corpus shared by the cases below.
const fs::path& corpus() {
  static const fs::path dir = [] {
    const fs::path d = oracle::temp_dir("cli_corpus");
    const Run r = run_octpad("--seed 3 synth --out-dir " + (d / "c").string() + " --n-bonafide 6 --n-pa 8", d);
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    const auto d = oracle::temp_dir("cli_usage");
    CHECK(run_octpad("", d).code == 1);
    CHECK(run_octpad("bogus", d).code == 1);
    CHECK(run_octpad("eval --fdr 2 --scores x.csv", d).code == 1);
    CHECK(run_octpad("--help", d).code == 0);
    CHECK(run_octpad("xval --help", d).code == 0);
  }

  TEST_CASE("config files are validated") {
    const auto d = oracle::temp_dir("cli_config");
    std::ofstream(d / "bad.json") << R"({"preprocess": {"hh": 3}})";
    std::ofstream(d / "neg.json") << R"({"preprocess": {"h": -3}})";
    const std::string scan = (corpus() / "c" / "bf_00000.png").string();
    CHECK(run_octpad("--config " + (d / "bad.json").string() + " preprocess --in " + scan + " --out " +
                     (d / "m.png").string(),
                 d)
              .code == 1);
    CHECK(run_octpad("--config " + (d / "neg.json").string() + " preprocess --in " + scan + " --out " +
                     (d / "m.png").string(),
                 d)
              .code == 1);
    CHECK(run_octpad("preprocess --h 0 --in " + scan + " --out " + (d / "m.png").string(), d).code == 1);
  }

  TEST_CASE("preprocess and patches") {
    const auto d = oracle::temp_dir("cli_pp");
    const std::string scan = (corpus() / "c" / "bf_00000.png").string();
    REQUIRE(run_octpad("preprocess --in " + scan + " --out " + (d / "m" / "mask.png").string(), d).code == 0);
    CHECK(fs::exists(d / "m" / "mask.png"));
    CHECK(fs::exists(d / "m" / "octpad_config.json"));
    REQUIRE(run_octpad("patches --scan " + scan + " --mask " + (d / "m" / "mask.png").string() + " --scan-id s --out-dir " +
                       (d / "p").string(),
                   d)
                .code == 0);
    const int n = count_lines(slurp(d / "p" / "patches.jsonl"));
    CHECK(n > 0);
    CHECK(n <= 60);
  }

  TEST_CASE("train, score, fixate and eval") {
    const auto d = oracle::temp_dir("cli_train");
    const std::string manifest = (corpus() / "c" / "manifest.jsonl").string();
    REQUIRE(run_octpad("train --manifest " + manifest + " --out " + (d / "model.opad").string() +
                       " --epochs 1 --patches-per-scan 2",
                   d)
                .code == 0);
    REQUIRE(run_octpad("score --model " + (d / "model.opad").string() + " --manifest " + manifest + " --out " +
                       (d / "scores.csv").string(),
                   d)
                .code == 0);
    const std::string csv = slurp(d / "scores.csv");
    CHECK(csv.rfind("scan_id,label,material,n_patches,global_score\n", 0) == 0);
    CHECK(count_lines(csv) == 1 + 14);

    const Run ev = run_octpad("eval --scores " + (d / "scores.csv").string() + " --out-dir " + (d / "ev").string(), d);
    CHECK(ev.code == 0);
    CHECK(ev.out.find("TDR ") != std::string::npos);
    CHECK(fs::exists(d / "ev" / "roc.csv"));
    CHECK(fs::exists(d / "ev" / "roc.svg"));

    run_octpad("preprocess --in " + (corpus() / "c" / "bf_00001.png").string() + " --out " + (d / "mask.png").string(), d);
    run_octpad("patches --scan " + (corpus() / "c" / "bf_00001.png").string() + " --mask " + (d / "mask.png").string() +
               " --scan-id s --out-dir " + (d / "p").string(),
           d);
    fs::path first;
    for (const auto& e : fs::directory_iterator(d / "p"))
      if (e.path().extension() == ".png") first = e.path();
    REQUIRE(!first.empty());
    const Run fx = run_octpad("fixate --model " + (d / "model.opad").string() + " --patch " + first.string() + " --out " +
                              (d / "heat.png").string(),
                          d);
    if (fx.code == 0) {
      CHECK(fx.out.find("spoofness ") != std::string::npos);
      CHECK(fs::exists(d / "heat.png"));
      CHECK(slurp(d / "heat.csv").rfind("row,col,weight\n", 0) == 0);
    } else {
      CHECK(fx.code == 2);  // only a fixation-free patch may fail
      CHECK(slurp(d / "stderr.txt").find("no fixations") != std::string::npos);
    }

    std::ofstream(d / "junk.opad") << "junk";
    CHECK(run_octpad("score --model " + (d / "junk.opad").string() + " --manifest " + manifest + " --out " +
                     (d / "s2.csv").string(),
                 d)
              .code == 2);
  }

  TEST_CASE("xval is reproducible") {
    const auto d = oracle::temp_dir("cli_xval");
    const std::string manifest = (corpus() / "c" / "manifest.jsonl").string();
    for (const char* run : {"a", "b"}) {
      const Run r = run_octpad("--seed 11 xval --manifest " + manifest + " --out-dir " + (d / run).string() +
                               " --k 2 --epochs 1 --patches-per-scan 2",
                           d);
      REQUIRE(r.code == 0);
      CHECK(r.out.find("mean TDR ") != std::string::npos);
    }
    for (const char* name : {"scores.csv", "scores_fold1.csv", "scores_fold2.csv", "roc_fold1.csv", "roc.svg",
                              "summary.json", "octpad_config.json"}) {
      INFO(name);
      CHECK(fs::exists(d / "a" / name));
      CHECK(slurp(d / "a" / name) == slurp(d / "b" / name));
    }
  }
}
