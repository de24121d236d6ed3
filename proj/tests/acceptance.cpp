// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
//
//   acceptance [OUT_DIR]    (reports and models are written under OUT_DIR, default ./acceptance_out)

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "skigear/skigear.hpp"

namespace fs = std::filesystem;
using namespace skigear;
using nlohmann::json;

namespace {

constexpr std::uint64_t data_seed = 1;
constexpr std::uint64_t experiment_seed = 1;
constexpr std::size_t epoch_budget = 40;
constexpr std::size_t patience = 10;
constexpr std::size_t fold_size = 329;

constexpr double grad_tolerance = 1e-4;
constexpr double grad_seconds = 120.0;
constexpr double lstm_floor = 0.90;
constexpr double blstm_band = 0.03;
constexpr double cnn_margin = 0.02;
constexpr double exp1_minutes = 45.0;
constexpr double loso_floor = 0.50;
constexpr double trace_tolerance = 1e-12;

const std::array<std::size_t, gear_count> required_gear_totals{585, 252, 473, 360};  // DP, G2, G3, G4
constexpr std::size_t expected_total = 1671;

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << detail << std::endl;
}

void info(const std::string& msg) { std::cout << "       " << msg << std::endl; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_report(const ExperimentReport& r, const fs::path& path) {
  fs::create_directories(path.parent_path());
  csv::write_file(path.string(), report_to_json(r).dump(2) + "\n");
  fs::path confusion = path;
  confusion.replace_extension(".confusion.csv");
  csv::write_file(confusion.string(), confusion_to_csv(r.pooled));
}

ExperimentConfig experiment_config(ModelKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.train.epochs = epoch_budget;
  cfg.train.patience = patience;
  cfg.folds = 5;
  cfg.fold_size = fold_size;
  cfg.seed = experiment_seed;
  return cfg;
}

std::vector<StrokeSegment> full_scale_strokes() {
  std::vector<StrokeSegment> strokes;
  for (const Session& s : generate_paper_scale_dataset(data_seed)) {
    auto part = extract_strokes(s);
    strokes.insert(strokes.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return strokes;
}

// ---- 1 ------------------------------------------------------------------------

void gradient_correctness(const std::vector<StrokeSegment>& strokes) {
  const auto t0 = clock_type::now();
  const Normalizer norm = fit_normalizer(strokes);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(0, strokes.size() - 1);
  double worst = 0.0;
  std::size_t checked = 0;
  std::string per_kind;
  for (ModelKind kind : {ModelKind::LSTM, ModelKind::BLSTM, ModelKind::CNN}) {
    Model m = init_model(ModelConfig::defaults(kind, 11));
    // Zero initial biases put every padded window exactly on the ReLU kink.
    std::normal_distribution<double> bias_draw(0.0, 0.1);
    for (std::size_t p = 0; p < m.params.size(); ++p)
      if (m.params.name(p).ends_with("bias"))
        for (double& v : m.params.value(p).values()) v = bias_draw(rng);
    double kind_worst = 0.0;
    for (int k = 0; k < 3; ++k) {
      const StrokeSegment& s = strokes[pick(rng)];
      const Tensor x = norm.apply(s).matrix.reshaped({1, s.matrix.dim(0), channel_count});
      const auto res = oracle::gradcheck(
          m.params,
          [&](GradientTape& t) {
            return ad::softmax_cross_entropy(t, model_logits(t, m, t.constant(x)),
                                             encode_label(s.gear).reshaped({1, gear_count}));
          },
          rng());
      kind_worst = std::max(kind_worst, res.max_rel_error);
      checked += res.checked;
    }
    worst = std::max(worst, kind_worst);
    per_kind += std::string(per_kind.empty() ? "" : ", ") + std::string(kind_name(kind)) + " " + sci(kind_worst);
  }
  const double secs = seconds_since(t0);
  verdict(1, "gradient correctness", worst < grad_tolerance && secs < grad_seconds,
          "max relative error " + per_kind + " (< " + sci(grad_tolerance) + ") over 3 strokes per model, " +
              std::to_string(checked) + " coordinates, " + fmt(secs, 1) + " s (< " + fmt(grad_seconds, 0) + " s)");
}

// ---- 2 ------------------------------------------------------------------------

void segmentation_oracle() {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PreprocessConfig pre;
  std::size_t count_ok = 0, boundary_ok = 0, total_strokes = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SkierProfile p;
    p.skier_id = "R" + std::to_string(trial);
    p.tempo_scale = 0.8 + 0.4 * u(rng);
    p.force_scale = 0.7 + 0.6 * u(rng);
    p.asym_bias = -0.1 + 0.2 * u(rng);
    p.phase_jitter_sd = 0.1 * u(rng);
    p.noise_sd = 2.0 * u(rng);
    const Gear g = gear_from_index(rng() % gear_count);
    const std::size_t n = 1 + rng() % 60;
    const Session smoothed = smooth(generate_session(p, g, n, rng()), pre.smooth_window);
    const auto strokes = segment_strokes(smoothed, pre);
    total_strokes += strokes.size();
    if (strokes.size() == n) ++count_ok;

    const auto edges = oracle::falling_edges_reference(combined_force(smoothed), pre.threshold);
    std::vector<std::pair<std::size_t, std::size_t>> expected, got;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      if (edges[i + 1] - edges[i] >= pre.min_stroke_len)
        expected.push_back({edges[i], std::min(edges[i + 1] - edges[i], pre.target_length)});
    for (const auto& s : strokes) got.push_back({std::stoul(s.source.substr(s.source.find('@') + 1)), s.true_length});
    if (got == expected) ++boundary_ok;
  }
  verdict(2, "segmentation oracle", count_ok == 100 && boundary_ok == 100,
          std::to_string(count_ok) + "/100 sessions with the configured stroke count, " + std::to_string(boundary_ok) +
              "/100 matching the reference boundaries (" + std::to_string(total_strokes) + " strokes)");
}

// ---- 3, 4, 5, 7, 8 ------------------------------------------------------------

struct ExperimentRun {
  std::map<ModelKind, ExperimentReport> exp1;
  ExperimentReport exp2;
  double exp1_seconds = 0.0;
  std::vector<fs::path> files;
};

ExperimentRun run_experiments(const std::vector<StrokeSegment>& strokes, const fs::path& dir) {
  ExperimentRun run;
  const progress_fn quiet;
  for (ModelKind kind : {ModelKind::LSTM, ModelKind::BLSTM, ModelKind::CNN}) {
    const auto t0 = clock_type::now();
    run.exp1[kind] = run_experiment1(strokes, experiment_config(kind), quiet);
    run.exp1_seconds += seconds_since(t0);
    const fs::path file = dir / ("exp1_" + std::string(kind_name(kind)) + ".json");
    write_report(run.exp1[kind], file);
    run.files.push_back(file);
    std::string accs;
    for (const auto& f : run.exp1[kind].folds) accs += " " + fmt(f.accuracy);
    info(std::string(kind_name(kind)) + " cross-validation folds" + accs + ", mean " +
         fmt(run.exp1[kind].mean_accuracy) + ", " + fmt(seconds_since(t0) / 60.0, 1) + " min");
  }
  const auto t0 = clock_type::now();
  run.exp2 = run_experiment2(strokes, experiment_config(ModelKind::LSTM), "all", quiet);
  const fs::path file = dir / "exp2_lstm.json";
  write_report(run.exp2, file);
  run.files.push_back(file);
  std::string accs;
  for (const auto& f : run.exp2.folds) accs += " " + f.held_out + "=" + fmt(f.accuracy);
  info("lstm leave-one-skier-out" + accs + ", mean " + fmt(run.exp2.mean_accuracy) + ", " +
       fmt(seconds_since(t0) / 60.0, 1) + " min");
  return run;
}

void experiment1_criterion(const std::vector<StrokeSegment>& strokes, const ExperimentRun& run) {
  const auto totals = gear_counts(strokes);
  const auto assignment = stratified_folds(strokes, 5, experiment_seed, fold_size);
  std::vector<std::size_t> fold_sizes;
  for (std::size_t f = 0; f < assignment.k; ++f) fold_sizes.push_back(assignment.members(f).size());
  const bool sizes_ok = fold_sizes == std::vector<std::size_t>{329, 329, 329, 329, 355};
  const bool total_ok = strokes.size() == expected_total;
  const bool gears_ok = totals == required_gear_totals;
  const double lstm = run.exp1.at(ModelKind::LSTM).mean_accuracy;
  const double blstm = run.exp1.at(ModelKind::BLSTM).mean_accuracy;
  const double cnn = run.exp1.at(ModelKind::CNN).mean_accuracy;
  const bool lstm_ok = lstm >= lstm_floor;
  const bool blstm_ok = std::abs(blstm - lstm) <= blstm_band;
  const bool cnn_ok = cnn <= lstm + cnn_margin;
  const bool time_ok = run.exp1_seconds <= exp1_minutes * 60.0;
  auto mark = [](bool ok) { return ok ? "ok" : "MISS"; };
  std::string sizes;
  for (std::size_t s : fold_sizes) sizes += (sizes.empty() ? "" : "/") + std::to_string(s);
  verdict(3, "full-scale synthetic cross-validation",
          total_ok && gears_ok && sizes_ok && lstm_ok && blstm_ok && cnn_ok && time_ok,
          std::string("strokes ") + std::to_string(strokes.size()) + " [" + mark(total_ok) + "]; gear totals DP/G2/G3/G4 " +
              std::to_string(totals[0]) + "/" + std::to_string(totals[1]) + "/" + std::to_string(totals[2]) + "/" +
              std::to_string(totals[3]) + " vs 585/252/473/360 [" + mark(gears_ok) + "]; fold sizes " + sizes + " [" +
              mark(sizes_ok) + "]; lstm " + fmt(lstm) + " >= 0.90 [" + mark(lstm_ok) + "]; |blstm " + fmt(blstm) +
              " - lstm| <= 0.03 [" + mark(blstm_ok) + "]; cnn " + fmt(cnn) + " <= lstm + 0.02 [" + mark(cnn_ok) +
              "]; " + fmt(run.exp1_seconds / 60.0, 1) + " min <= 45 [" + mark(time_ok) + "]");
  if (!gears_ok)
    info("the required per-gear totals sum to " +
         std::to_string(std::accumulate(required_gear_totals.begin(), required_gear_totals.end(), std::size_t{0})) +
         ", not " + std::to_string(expected_total) + "; both cannot hold for one dataset");
}

void experiment2_criterion(const ExperimentRun& run) {
  const double loso = run.exp2.mean_accuracy, cv = run.exp1.at(ModelKind::LSTM).mean_accuracy;
  verdict(4, "leave-one-skier-out gap", loso < cv && loso >= loso_floor,
          "lstm leave-one-skier-out mean " + fmt(loso) + " < cross-validation mean " + fmt(cv) + " and >= " +
              fmt(loso_floor, 2));
}

void determinism_criterion(const ExperimentRun& a, const ExperimentRun& b) {
  std::size_t same = 0;
  std::string differing;
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    fs::path ca = a.files[i], cb = b.files[i];
    ca.replace_extension(".confusion.csv");
    cb.replace_extension(".confusion.csv");
    const bool eq = deterministic_part(json::parse(slurp(a.files[i]))).dump(2) ==
                        deterministic_part(json::parse(slurp(b.files[i]))).dump(2) &&
                    slurp(ca) == slurp(cb);
    if (eq)
      ++same;
    else
      differing += " " + a.files[i].filename().string();
  }
  verdict(5, "determinism", same == a.files.size(),
          std::to_string(same) + "/" + std::to_string(a.files.size()) +
              " report files byte-identical outside the metadata block, confusion CSVs included" +
              (differing.empty() ? "" : "; differing:" + differing));
}

void model_round_trip(const std::vector<StrokeSegment>& strokes, const fs::path& dir) {
  const auto assignment = stratified_folds(strokes, 5, experiment_seed, fold_size);
  std::vector<StrokeSegment> train_set, test_set;
  for (std::size_t i = 0; i < strokes.size(); ++i) (assignment.fold_of[i] == 0 ? test_set : train_set).push_back(strokes[i]);
  std::size_t compared = 0, identical = 0;
  for (ModelKind kind : {ModelKind::LSTM, ModelKind::BLSTM, ModelKind::CNN}) {
    TrainConfig tc;
    tc.epochs = 2;
    tc.patience = 2;
    tc.seed = experiment_seed;
    const Model m = train(init_model(ModelConfig::defaults(kind, experiment_seed)), train_set, test_set, tc).model;
    const std::string path = (dir / ("model_" + std::string(kind_name(kind)) + ".json")).string();
    save_model(m, path);
    const Model back = load_model(path);
    for (const auto& s : test_set) {
      ++compared;
      if (forward(m, s) == forward(back, s)) ++identical;
    }
  }
  verdict(6, "model round trip", compared > 0 && identical == compared,
          std::to_string(identical) + "/" + std::to_string(compared) +
              " probability vectors identical after save/load (3 models x fold-1 test strokes)");
}

void confusion_consistency(const std::vector<StrokeSegment>& strokes, const std::vector<ExperimentRun>& runs) {
  const auto assignment = stratified_folds(strokes, 5, experiment_seed, fold_size);
  std::vector<std::array<std::size_t, gear_count>> cv_support(5, std::array<std::size_t, gear_count>{});
  std::map<std::string, std::array<std::size_t, gear_count>> skier_support;
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    ++cv_support[assignment.fold_of[i]][gear_index(strokes[i].gear)];
    ++skier_support[strokes[i].skier_id][gear_index(strokes[i].gear)];
  }
  const auto totals = gear_counts(strokes);

  std::size_t matrices = 0, bad = 0;
  auto check = [&](const json& confusion, double accuracy, const std::array<std::size_t, gear_count>& support) {
    ++matrices;
    std::size_t trace = 0, total = 0;
    bool rows_ok = true;
    for (std::size_t t = 0; t < gear_count; ++t) {
      std::size_t row = 0;
      for (std::size_t p = 0; p < gear_count; ++p) row += confusion[t][p].get<std::size_t>();
      trace += confusion[t][t].get<std::size_t>();
      total += row;
      rows_ok = rows_ok && row == support[t];
    }
    const bool acc_ok = total > 0 && std::abs(static_cast<double>(trace) / static_cast<double>(total) - accuracy) <= trace_tolerance;
    if (!rows_ok || !acc_ok) ++bad;
  };
  std::size_t reports = 0;
  for (const auto& run : runs)
    for (const auto& file : run.files) {
      ++reports;
      const json r = json::parse(slurp(file));
      check(r["confusion"], r["pooled_accuracy"].get<double>(), totals);
      for (const auto& f : r["folds"]) {
        const auto& support = f.contains("held_out") ? skier_support.at(f["held_out"].get<std::string>())
                                                     : cv_support.at(f["index"].get<std::size_t>());
        check(f["confusion"], f["accuracy"].get<double>(), support);
      }
    }
  verdict(7, "confusion-matrix consistency", bad == 0 && matrices > 0,
          std::to_string(matrices - bad) + "/" + std::to_string(matrices) + " matrices in " + std::to_string(reports) +
              " reports with trace/total within 1e-12 of the reported accuracy and row sums equal to test support");
}

void hard_case(const ExperimentRun& run) {
  const ConfusionMatrix& cm = run.exp1.at(ModelKind::LSTM).pooled;
  std::string recalls;
  bool g3_min = true;
  for (Gear g : all_gears) {
    recalls += std::string(recalls.empty() ? "" : ", ") + std::string(gear_code(g)) + " " + fmt(cm.recall(g));
    if (g != Gear::Gear3 && cm.recall(g) < cm.recall(Gear::Gear3)) g3_min = false;
  }
  verdict(8, "Gear 3 hardest", g3_min, "pooled lstm cross-validation recall " + recalls);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out);
  const auto t0 = clock_type::now();
  std::cout << "skigear " << toolkit_version << " acceptance, epoch budget " << epoch_budget << ", patience " << patience
            << std::endl;

  const auto strokes = full_scale_strokes();
  gradient_correctness(strokes);
  segmentation_oracle();

  const ExperimentRun first = run_experiments(strokes, out / "run1");
  experiment1_criterion(strokes, first);
  experiment2_criterion(first);
  info("lstm pooled cross-validation confusion:");
  std::istringstream heat(confusion_heatmap(first.exp1.at(ModelKind::LSTM).pooled));
  for (std::string line; std::getline(heat, line);) info(line);

  info("repeating criteria 3-4 with identical seeds");
  const ExperimentRun second = run_experiments(strokes, out / "run2");
  determinism_criterion(first, second);
  model_round_trip(strokes, out);
  confusion_consistency(strokes, {first, second});
  hard_case(first);

  std::cout << (failures ? std::to_string(failures) + " of 8 criteria failed" : std::string("all 8 criteria passed"))
            << ", " << fmt(seconds_since(t0) / 60.0, 1) << " min" << std::endl;
  return failures ? 1 : 0;
}
