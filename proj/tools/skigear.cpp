// skigear: command-line front end.
//
//   skigear synth   --paper-scale | --spec FILE  --out DIR [--seed N]
//   skigear segment --manifest FILE --out STROKES.csv [--threshold 0.4] [--length 140]
//   skigear train   --strokes FILE --model lstm|blstm|cnn --out MODEL.json [training flags]
//   skigear xval    --strokes FILE --model KIND --report REPORT.json [--folds 5] [--fold-size 0]
//   skigear loso    --strokes FILE --model KIND --report REPORT.json [--hold-out SKIER|all]
//   skigear eval    --model MODEL.json --strokes FILE --report REPORT.json
//
// Exit status: 0 success, 1 runtime or data failure, 2 usage error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "run_manifest.hpp"
#include "skigear/skigear.hpp"

namespace fs = std::filesystem;
using namespace skigear;
using nlohmann::json;

namespace {

struct TrainFlags {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t patience = 10;
  double validation_fraction = 0.1;

  TrainConfig config(std::uint64_t seed) const { return {epochs, batch_size, lr, patience, seed}; }
  json to_json() const {
    return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"patience", patience},
            {"validation_fraction", validation_fraction}};
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--epochs", f.epochs, "Maximum training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--patience", f.patience, "Early-stopping patience in epochs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--validation-fraction", f.validation_fraction, "Share of training strokes held out for validation")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.5));
}

CLI::Option* add_model_kind(CLI::App* cmd, std::string& kind) {
  return cmd->add_option("--model", kind, "Architecture")
      ->required()
      ->check(CLI::IsMember({"lstm", "blstm", "cnn"}, CLI::ignore_case));
}

/// `dir/stem<suffix>` for a file path.
std::string sibling(const std::string& path, const std::string& suffix) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

progress_fn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](std::string_view msg) { std::cerr << msg << '\n'; };
}

std::string gear_summary(std::span<const StrokeSegment> strokes) {
  const auto n = gear_counts(strokes);
  std::string out = "strokes: " + std::to_string(strokes.size()) + " (";
  for (Gear g : all_gears)
    out += std::string(gear_index(g) ? ", " : "") + std::string(gear_code(g)) + "=" + std::to_string(n[gear_index(g)]);
  return out + ")";
}

std::vector<StrokeSegment> load_strokes(const std::string& path) {
  auto strokes = read_stroke_archive(path);
  if (strokes.empty()) throw data_error("'" + path + "' holds no strokes");
  return strokes;
}

ExperimentReport single_round_report(const ExperimentReport& all, const FoldResult& f) {
  ExperimentReport r = all;
  r.folds = {f};
  r.mean_accuracy = f.accuracy;
  r.pooled = f.confusion;
  r.pooled_accuracy = f.accuracy;
  return r;
}

void write_report_files(const ExperimentReport& r, const std::string& path, cli::RunManifest& run) {
  ensure_parent(path);
  csv::write_file(path, report_to_json(r).dump(2) + "\n");
  const std::string confusion = sibling(path, ".confusion.csv");
  csv::write_file(confusion, confusion_to_csv(r.pooled));
  run.output(path);
  run.output(confusion);
}

void print_report(const ExperimentReport& r) {
  for (const auto& f : r.folds)
    std::cout << (f.held_out.empty() ? "fold " + std::to_string(f.index + 1) : "held out " + f.held_out)
              << ": accuracy " << f.accuracy << " (" << f.test_size << " strokes)\n";
  std::cout << "mean accuracy " << r.mean_accuracy << "\n" << confusion_heatmap(r.pooled);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-country ski gear classification from pole sensor data"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", std::string(toolkit_version));

  std::uint64_t seed = 0;
  bool quiet = false;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic sessions and a manifest");
  std::string spec_path, out_dir;
  bool paper_scale = false;
  auto* spec_opt = synth->add_option("--spec", spec_path, "SynthSpec JSON file")->check(CLI::ExistingFile);
  auto* paper_opt = synth->add_flag("--paper-scale", paper_scale, "Three skiers, 1671 strokes");
  spec_opt->excludes(paper_opt);
  synth->add_option("--out", out_dir, "Output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed, "Random seed (overrides the spec file's seed)")->capture_default_str();

  // segment
  auto* segment = app.add_subcommand("segment", "Cut sessions into fixed-length strokes");
  std::string manifest_path, strokes_out;
  PreprocessConfig pre;
  segment->add_option("--manifest", manifest_path, "Manifest CSV (path,skier_id,gear)")->required();
  segment->add_option("--out", strokes_out, "Stroke archive CSV")->required();
  segment->add_option("--threshold", pre.threshold, "Force threshold in N")->capture_default_str();
  segment->add_option("--length", pre.target_length, "Stroke length in samples")->capture_default_str();
  segment->add_option("--smooth", pre.smooth_window, "Moving-average window (odd)")->capture_default_str();
  segment->add_option("--min-length", pre.min_stroke_len, "Shortest kept stroke in samples")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on a stroke archive");
  std::string strokes_path, model_kind, model_out;
  TrainFlags tf;
  train_cmd->add_option("--strokes", strokes_path, "Stroke archive CSV")->required()->check(CLI::ExistingFile);
  add_model_kind(train_cmd, model_kind);
  train_cmd->add_option("--out", model_out, "Model JSON")->required();
  train_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");
  add_train_flags(train_cmd, tf);

  // xval
  auto* xval = app.add_subcommand("xval", "Stratified k-fold cross-validation");
  std::string report_path;
  std::size_t folds = 5, fold_size = 0;
  xval->add_option("--strokes", strokes_path, "Stroke archive CSV")->required()->check(CLI::ExistingFile);
  add_model_kind(xval, model_kind);
  xval->add_option("--folds", folds, "Fold count")->capture_default_str()->check(CLI::Range(2, 1000));
  xval->add_option("--fold-size", fold_size, "Strokes in each of the first k-1 folds (0: balanced)")
      ->capture_default_str();
  xval->add_option("--seed", seed, "Random seed")->capture_default_str();
  xval->add_option("--report", report_path, "Report JSON")->required();
  xval->add_flag("--quiet", quiet, "No per-epoch progress");
  add_train_flags(xval, tf);

  // loso
  auto* loso = app.add_subcommand("loso", "Leave-one-skier-out evaluation");
  std::string hold_out = "all";
  loso->add_option("--strokes", strokes_path, "Stroke archive CSV")->required()->check(CLI::ExistingFile);
  add_model_kind(loso, model_kind);
  loso->add_option("--hold-out", hold_out, "Skier id, or 'all' to rotate")->capture_default_str();
  loso->add_option("--seed", seed, "Random seed")->capture_default_str();
  loso->add_option("--report", report_path, "Report JSON")->required();
  loso->add_flag("--quiet", quiet, "No per-epoch progress");
  add_train_flags(loso, tf);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a stroke archive");
  std::string model_path;
  eval->add_option("--model", model_path, "Model JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--strokes", strokes_path, "Stroke archive CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", report_path, "Report JSON")->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed() && !paper_scale && spec_path.empty())
      throw CLI::RequiredError("one of --paper-scale or --spec");
    if ((train_cmd->parsed() || xval->parsed() || loso->parsed()) && tf.patience > tf.epochs)
      throw CLI::ValidationError("--patience", "must not exceed --epochs");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      SynthSpec spec = paper_scale ? paper_scale_spec(seed) : load_synth_spec(spec_path);
      if (!paper_scale && synth_seed->count()) spec.seed = seed;
      cli::RunManifest run("synth", {{"paper_scale", paper_scale}, {"spec", spec_path}, {"out", out_dir}}, spec.seed);
      if (!spec_path.empty()) run.input(spec_path);
      fs::create_directories(out_dir);
      std::vector<ManifestEntry> entries;
      for (const Session& s : generate(spec)) {
        const std::string name = s.source + ".csv";
        write_session_csv(s, (fs::path(out_dir) / name).string());
        entries.push_back({name, s.skier_id, s.gear});
        run.output((fs::path(out_dir) / name).string());
      }
      const std::string manifest = (fs::path(out_dir) / "manifest.csv").string();
      write_manifest(entries, manifest);
      const std::string spec_echo = (fs::path(out_dir) / "synth_spec.json").string();
      csv::write_file(spec_echo, synth_spec_to_json(spec).dump(2) + "\n");
      run.output(manifest);
      run.output(spec_echo);
      run.write((fs::path(out_dir) / "run.json").string());
      std::cout << "sessions: " << entries.size() << " written to " << out_dir << '\n';
    } else if (segment->parsed()) {
      pre.validate();
      cli::RunManifest run("segment",
                           {{"manifest", manifest_path}, {"out", strokes_out}, {"threshold", pre.threshold},
                            {"length", pre.target_length}, {"smooth", pre.smooth_window},
                            {"min_length", pre.min_stroke_len}},
                           0);
      const Catalog catalog = load_catalog(manifest_path);
      if (catalog.sessions.empty()) throw data_error("no sessions");
      run.input(manifest_path);
      std::vector<StrokeSegment> strokes;
      for (const Session& s : catalog.sessions) {
        run.input(s.source);
        auto part = extract_strokes(s, pre);
        strokes.insert(strokes.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      ensure_parent(strokes_out);
      write_stroke_archive(strokes, strokes_out);
      run.output(strokes_out);
      run.write(sibling(strokes_out, ".run.json"));
      std::cout << gear_summary(strokes) << '\n';
    } else if (train_cmd->parsed()) {
      const auto kind = parse_model_kind(model_kind);
      cli::RunManifest run("train", {{"strokes", strokes_path}, {"model", kind_name(kind)}, {"out", model_out},
                                     {"train", tf.to_json()}},
                           seed);
      run.input(strokes_path);
      const auto strokes = load_strokes(strokes_path);
      std::vector<std::size_t> all(strokes.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const IndexSplit tv = detail::validation_split(strokes, all, tf.validation_fraction, seed);
      const auto result = train(init_model(ModelConfig::defaults(kind, seed)), detail::gather(strokes, tv.train),
                                detail::gather(strokes, tv.test), tf.config(seed), progress_printer(quiet));
      ensure_parent(model_out);
      save_model(result.model, model_out);
      const std::string history = sibling(model_out, ".history.csv");
      csv::write_file(history, history_to_csv(result.history));
      run.output(model_out);
      run.output(history);
      run.write(sibling(model_out, ".run.json"));
      std::cout << "best epoch " << result.best_epoch << " of " << result.history.size() << ", validation accuracy "
                << result.history[result.best_epoch - 1].val_acc << '\n';
    } else if (xval->parsed() || loso->parsed()) {
      const auto kind = parse_model_kind(model_kind);
      const bool cv = xval->parsed();
      ExperimentConfig cfg{kind, tf.config(seed), folds, fold_size, tf.validation_fraction, seed};
      json flags = {{"strokes", strokes_path}, {"model", kind_name(kind)}, {"report", report_path},
                    {"train", tf.to_json()}};
      if (cv) {
        flags["folds"] = folds;
        flags["fold_size"] = fold_size;
      } else {
        flags["hold_out"] = hold_out;
      }
      cli::RunManifest run(cv ? "xval" : "loso", flags, seed);
      run.input(strokes_path);
      const auto strokes = load_strokes(strokes_path);
      const ExperimentReport r = cv ? run_experiment1(strokes, cfg, progress_printer(quiet))
                                    : run_experiment2(strokes, cfg, hold_out, progress_printer(quiet));
      write_report_files(r, report_path, run);
      if (!cv && r.folds.size() > 1)
        for (const auto& f : r.folds) write_report_files(single_round_report(r, f), sibling(report_path, "." + f.held_out + ".json"), run);
      run.write(sibling(report_path, ".run.json"));
      print_report(r);
    } else if (eval->parsed()) {
      cli::RunManifest run("eval", {{"model", model_path}, {"strokes", strokes_path}, {"report", report_path}}, 0);
      run.input(model_path);
      run.input(strokes_path);
      const Model m = load_model(model_path);
      const auto strokes = load_strokes(strokes_path);
      const Evaluation ev = evaluate(m, strokes);
      json per_class = json::object();
      for (Gear g : all_gears)
        per_class[std::string(gear_code(g))] = {{"precision", ev.confusion.precision(g)},
                                                {"recall", ev.confusion.recall(g)},
                                                {"support", ev.confusion.row_sum(g)}};
      const json report = {{"protocol", "evaluation"},
                           {"model", kind_name(m.config.kind)},
                           {"test_size", strokes.size()},
                           {"accuracy", ev.accuracy},
                           {"confusion", confusion_to_json(ev.confusion)},
                           {"per_class", per_class},
                           {"metadata", {{"started_at", detail::utc_now()}}}};
      ensure_parent(report_path);
      csv::write_file(report_path, report.dump(2) + "\n");
      const std::string confusion = sibling(report_path, ".confusion.csv");
      csv::write_file(confusion, confusion_to_csv(ev.confusion));
      run.output(report_path);
      run.output(confusion);
      run.write(sibling(report_path, ".run.json"));
      std::cout << "accuracy " << ev.accuracy << " (" << strokes.size() << " strokes)\n"
                << confusion_heatmap(ev.confusion);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
