#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "skigear/skigear.hpp"

namespace fs = std::filesystem;
using namespace skigear;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string output;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(SKIGEAR_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json deterministic_json(const fs::path& p) { return deterministic_part(json::parse(slurp(p))); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("skigear_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    // Small three-skier set for the training commands.
    SynthSpec spec;
    spec.seed = 5;
    for (const char* id : {"A", "B", "C"})
      for (Gear g : all_gears) {
        SkierProfile p;
        p.skier_id = id;
        p.noise_sd = 1.0;
        spec.entries.push_back({p, g, 4});
      }
    std::ofstream(dir_ / "small.json") << synth_spec_to_json(spec).dump();
    const CliRun s = cli("synth --spec " + str("small.json") + " --out " + str("small"));
    ASSERT_EQ(s.code, 0) << s.output;
    const CliRun g = cli("segment --manifest " + str("small/manifest.csv") + " --out " + str("small.strokes.csv"));
    ASSERT_EQ(g.code, 0) << g.output;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string str(const std::string& rel) { return (dir_ / rel).string(); }
  static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  const CliRun missing_out = cli("synth --paper-scale");
  EXPECT_EQ(missing_out.code, 2);
  EXPECT_NE(missing_out.output.find("--out"), std::string::npos);
  EXPECT_NE(missing_out.output.find("Usage"), std::string::npos);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("synth --out " + str("x")).code, 2);
  EXPECT_EQ(cli("segment --manifest m.csv").code, 2);
  EXPECT_EQ(cli("train --strokes " + str("small.strokes.csv") + " --model gru --out " + str("m.json")).code, 2);
  EXPECT_EQ(cli("xval --strokes " + str("small.strokes.csv") + " --model cnn --report r.json --epochs 2 --patience 3").code, 2);
  EXPECT_EQ(cli("loso --strokes " + str("small.strokes.csv") + " --model cnn").code, 2);
  EXPECT_EQ(cli("eval --model " + str("absent.json") + " --strokes " + str("small.strokes.csv") + " --report r.json").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
  const CliRun version = cli("--version");
  EXPECT_EQ(version.code, 0);
  EXPECT_NE(version.output.find(toolkit_version), std::string::npos);
}

TEST_F(Cli, FullScaleSynthWritesTwelveSessionsDeterministically) {
  const CliRun a = cli("synth --paper-scale --seed 1 --out " + str("full_a"));
  ASSERT_EQ(a.code, 0) << a.output;
  std::size_t sessions = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "full_a"))
    if (e.path().extension() == ".csv" && e.path().filename() != "manifest.csv") ++sessions;
  EXPECT_EQ(sessions, 12u);
  EXPECT_TRUE(fs::exists(dir_ / "full_a" / "manifest.csv"));

  ASSERT_EQ(cli("synth --paper-scale --seed 1 --out " + str("full_b")).code, 0);
  const json ra = json::parse(slurp(dir_ / "full_a" / "run.json")), rb = json::parse(slurp(dir_ / "full_b" / "run.json"));
  ASSERT_EQ(ra["outputs"].size(), 14u);
  for (std::size_t i = 0; i < ra["outputs"].size(); ++i)
    EXPECT_EQ(ra["outputs"][i]["sha256"], rb["outputs"][i]["sha256"]) << ra["outputs"][i]["path"];
  EXPECT_EQ(ra["seed"], 1);
  EXPECT_EQ(ra["toolkit_version"], toolkit_version);

  const CliRun seg = cli("segment --manifest " + str("full_a/manifest.csv") + " --out " + str("full.strokes.csv"));
  ASSERT_EQ(seg.code, 0) << seg.output;
  EXPECT_EQ(seg.output, "strokes: 1671 (DP=586, G2=252, G3=473, G4=360)\n");
}

TEST_F(Cli, SegmentEdgeCases) {
  const CliRun none = cli("segment --manifest " + str("small/manifest.csv") + " --threshold 1e9 --out " + str("none.csv"));
  EXPECT_EQ(none.code, 0) << none.output;
  EXPECT_EQ(none.output.rfind("strokes: 0 ", 0), 0u) << none.output;

  std::ofstream(dir_ / "empty_manifest.csv") << "path,skier_id,gear\n";
  const CliRun empty = cli("segment --manifest " + str("empty_manifest.csv") + " --out " + str("e.csv"));
  EXPECT_EQ(empty.code, 1);
  EXPECT_NE(empty.output.find("no sessions"), std::string::npos) << empty.output;

  EXPECT_EQ(cli("segment --manifest " + str("absent.csv") + " --out " + str("e.csv")).code, 1);
  EXPECT_EQ(cli("segment --manifest " + str("small/manifest.csv") + " --length 0 --out " + str("e.csv")).code, 1);
}

TEST_F(Cli, TrainAndEvalRoundTrip) {
  const std::string common = " --strokes " + str("small.strokes.csv") + " --model CNN --epochs 3 --patience 3 --quiet --seed 2";
  const CliRun a = cli("train" + common + " --out " + str("models/a.json"));
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(cli("train" + common + " --out " + str("models/b.json")).code, 0);
  EXPECT_EQ(slurp(dir_ / "models" / "a.json"), slurp(dir_ / "models" / "b.json"));
  EXPECT_EQ(slurp(dir_ / "models" / "a.history.csv"), slurp(dir_ / "models" / "b.history.csv"));
  const json run = json::parse(slurp(dir_ / "models" / "a.run.json"));
  EXPECT_EQ(run["command"], "train");
  EXPECT_EQ(run["flags"]["train"]["epochs"], 3);
  EXPECT_EQ(run["inputs"][0]["sha256"].get<std::string>().size(), 64u);

  const CliRun ev = cli("eval --model " + str("models/a.json") + " --strokes " + str("small.strokes.csv") + " --report " +
                     str("eval.json"));
  ASSERT_EQ(ev.code, 0) << ev.output;
  const json rep = json::parse(slurp(dir_ / "eval.json"));
  const Model m = load_model(str("models/a.json"));
  EXPECT_EQ(rep["accuracy"].get<double>(), evaluate(m, read_stroke_archive(str("small.strokes.csv"))).accuracy);
  EXPECT_TRUE(fs::exists(dir_ / "eval.confusion.csv"));

  std::ofstream(dir_ / "broken.json") << "{\"format\":";
  EXPECT_EQ(cli("eval --model " + str("broken.json") + " --strokes " + str("small.strokes.csv") + " --report " +
                str("e.json")).code,
            1);
}

TEST_F(Cli, XvalAndLosoReportsAreReproducible) {
  const std::string common = " --strokes " + str("small.strokes.csv") + " --model cnn --epochs 2 --patience 2 --quiet --seed 3";
  ASSERT_EQ(cli("xval" + common + " --folds 3 --report " + str("xa.json")).code, 0);
  const CliRun xb = cli("xval" + common + " --folds 3 --report " + str("xb.json"));
  ASSERT_EQ(xb.code, 0);
  EXPECT_NE(xb.output.find("recall"), std::string::npos);
  EXPECT_EQ(deterministic_json(dir_ / "xa.json"), deterministic_json(dir_ / "xb.json"));
  EXPECT_EQ(slurp(dir_ / "xa.confusion.csv"), slurp(dir_ / "xb.confusion.csv"));
  const json x = json::parse(slurp(dir_ / "xa.json"));
  EXPECT_EQ(x["fold_accuracies"].size(), 3u);
  EXPECT_TRUE(x["metadata"].contains("wall_clock_seconds"));

  const CliRun lo = cli("loso" + common + " --report " + str("loso/all.json"));
  ASSERT_EQ(lo.code, 0) << lo.output;
  for (const char* id : {"A", "B", "C"}) {
    const json r = json::parse(slurp(dir_ / "loso" / ("all." + std::string(id) + ".json")));
    EXPECT_EQ(r["folds"][0]["held_out"], id);
  }
  EXPECT_EQ(json::parse(slurp(dir_ / "loso" / "all.json"))["fold_accuracies"].size(), 3u);
  const CliRun one = cli("loso" + common + " --hold-out B --report " + str("loso/b.json"));
  ASSERT_EQ(one.code, 0);
  EXPECT_EQ(json::parse(slurp(dir_ / "loso" / "b.json"))["fold_accuracies"].size(), 1u);
  EXPECT_EQ(cli("loso" + common + " --hold-out Z --report " + str("loso/z.json")).code, 1);
}
