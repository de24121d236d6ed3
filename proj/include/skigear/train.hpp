#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skigear/adam.hpp"
#include "skigear/model.hpp"
#include "skigear/preprocess.hpp"

namespace skigear {

/// -log(probs[target]) with probabilities clamped at 1e-12.
inline double cross_entropy(std::span<const double> probs, Gear target) {
  if (probs.size() != gear_count) throw dimension_error("cross_entropy expects 4 probabilities");
  return -std::log(std::max(probs[gear_index(target)], 1e-12));
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || patience == 0) throw contract_error("epochs, batch_size and patience must be positive");
    if (patience > epochs) throw contract_error("patience must not exceed epochs");
    if (!(lr >= 0.0)) throw contract_error("learning rate must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  Model model;  // weights of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

using progress_fn = std::function<void(std::string_view)>;

/// Loss and accuracy of a model over labelled raw strokes, one stroke at a time.
inline std::pair<double, double> loss_and_accuracy(const Model& m, std::span<const StrokeSegment> strokes) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& s : strokes) {
    const Tensor p = forward(m, s);
    loss += cross_entropy(p.data(), s.gear);
    correct += decode_label(p.data()) == s.gear;
  }
  const double n = static_cast<double>(strokes.size());
  return {loss / n, static_cast<double>(correct) / n};
}

/// Mini-batch Adam on mean softmax cross-entropy with early stopping on validation loss.
/// The normaliser is fitted on `train_set` and stored in the returned model.
inline TrainResult train(Model model, std::span<const StrokeSegment> train_set, std::span<const StrokeSegment> val_set,
                         const TrainConfig& cfg, const progress_fn& progress = {}) {
  cfg.validate();
  if (train_set.empty()) throw data_error("training set is empty");
  if (val_set.empty()) throw data_error("validation set is empty");

  model.norm = fit_normalizer(train_set);
  const std::size_t L = model.config.sequence_length;
  const std::size_t C = model.config.input_channels;
  const std::size_t row = L * C;
  std::vector<double> inputs(train_set.size() * row);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const StrokeSegment n = model.norm.apply(train_set[i]);
    if (n.matrix.shape() != shape_t{L, C})
      throw dimension_error("training stroke has shape " + to_string(n.matrix.shape()));
    std::copy(n.matrix.data().begin(), n.matrix.data().end(), inputs.begin() + static_cast<std::ptrdiff_t>(i * row));
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  const AdamConfig adam_cfg{.lr = cfg.lr};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{model, {}, 0};
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<double> stroke_loss(train_set.size());
  std::vector<char> stroke_hit(train_set.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);
      Tensor x({b, L, C});
      Tensor y({b, gear_count});
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t i = order[start + j];
        std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(i * row), row,
                    x.data().begin() + static_cast<std::ptrdiff_t>(j * row));
        y.at(j, gear_index(train_set[i].gear)) = 1.0;
      }
      GradientTape tape;
      const Var logits = model_logits(tape, model, tape.constant(std::move(x)));
      const Tensor probs = softmax(tape.value(logits));
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t i = order[start + j];
        const auto p = probs.data().subspan(j * gear_count, gear_count);
        stroke_loss[i] = cross_entropy(p, train_set[i].gear);
        stroke_hit[i] = decode_label(p) == train_set[i].gear;
      }
      const Var loss = ad::softmax_cross_entropy(tape, logits, y);
      const auto grads = tape.backward(loss, model.params);
      adam_step(model.params.values(), grads, adam, adam_cfg);
    }

    EpochRecord rec{epoch, 0, 0, 0, 0};
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      rec.train_loss += stroke_loss[i];
      rec.train_acc += stroke_hit[i];
    }
    rec.train_loss /= static_cast<double>(train_set.size());
    rec.train_acc /= static_cast<double>(train_set.size());
    std::tie(rec.val_loss, rec.val_acc) = loss_and_accuracy(model, val_set);
    result.history.push_back(rec);
    if (progress) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(4) << "epoch " << epoch << " train_loss " << rec.train_loss << " train_acc "
         << rec.train_acc << " val_loss " << rec.val_loss << " val_acc " << rec.val_acc;
      progress(os.str());
    }

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline std::string history_to_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + "," + csv::format_double(r.train_loss) + "," + csv::format_double(r.train_acc) +
           "," + csv::format_double(r.val_loss) + "," + csv::format_double(r.val_acc) + "\n";
  return out;
}

/// Rows are true gears, columns predicted gears.
class ConfusionMatrix {
 public:
  using counts_t = std::array<std::array<std::size_t, gear_count>, gear_count>;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(const counts_t& counts) : counts_(counts) {}

  void add(Gear truth, Gear predicted) { ++counts_[gear_index(truth)][gear_index(predicted)]; }

  std::size_t at(Gear truth, Gear predicted) const { return counts_[gear_index(truth)][gear_index(predicted)]; }
  const counts_t& counts() const noexcept { return counts_; }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : counts_) n += std::accumulate(r.begin(), r.end(), std::size_t{0});
    return n;
  }

  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < gear_count; ++i) n += counts_[i][i];
    return n;
  }

  std::size_t row_sum(Gear truth) const {
    const auto& r = counts_[gear_index(truth)];
    return std::accumulate(r.begin(), r.end(), std::size_t{0});
  }

  std::size_t column_sum(Gear predicted) const {
    std::size_t n = 0;
    for (const auto& r : counts_) n += r[gear_index(predicted)];
    return n;
  }

  double accuracy() const {
    if (total() == 0) throw data_error("accuracy of an empty confusion matrix");
    return static_cast<double>(trace()) / static_cast<double>(total());
  }

  /// Zero when the gear was never predicted.
  double precision(Gear g) const {
    const std::size_t col = column_sum(g);
    return col ? static_cast<double>(at(g, g)) / static_cast<double>(col) : 0.0;
  }

  /// Zero when the gear never occurs.
  double recall(Gear g) const {
    const std::size_t r = row_sum(g);
    return r ? static_cast<double>(at(g, g)) / static_cast<double>(r) : 0.0;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < gear_count; ++i)
      for (std::size_t j = 0; j < gear_count; ++j) counts_[i][j] += o.counts_[i][j];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  counts_t counts_{};
};

struct Evaluation {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
};

inline Evaluation evaluate(const Model& m, std::span<const StrokeSegment> strokes) {
  if (strokes.empty()) throw data_error("cannot evaluate on an empty stroke set");
  Evaluation e;
  for (const auto& s : strokes) e.confusion.add(s.gear, predict(m, s));
  e.accuracy = e.confusion.accuracy();
  return e;
}

inline std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted";
  for (Gear g : all_gears) out += "," + std::string(gear_code(g));
  out += '\n';
  for (Gear t : all_gears) {
    out += gear_code(t);
    for (Gear p : all_gears) out += "," + std::to_string(cm.at(t, p));
    out += '\n';
  }
  return out;
}

/// Row-normalised text heatmap with counts.
inline std::string confusion_heatmap(const ConfusionMatrix& cm) {
  static constexpr std::string_view shades = " .:-=+*#%@";
  std::ostringstream os;
  os << "true\\pred";
  for (Gear g : all_gears) os << std::setw(10) << gear_code(g);
  os << "   recall\n";
  for (Gear t : all_gears) {
    os << std::setw(9) << gear_code(t);
    const std::size_t n = cm.row_sum(t);
    for (Gear p : all_gears) {
      const double frac = n ? static_cast<double>(cm.at(t, p)) / static_cast<double>(n) : 0.0;
      const auto shade = shades[std::min<std::size_t>(shades.size() - 1, static_cast<std::size_t>(frac * 9.0 + 0.5))];
      os << "  " << std::string(3, shade) << std::setw(5) << cm.at(t, p);
    }
    os << "   " << std::fixed << std::setprecision(3) << cm.recall(t) << '\n';
  }
  return os.str();
}

// ---- experiments ------------------------------------------------------------

struct ExperimentConfig {
  ModelKind kind = ModelKind::LSTM;
  TrainConfig train;
  std::size_t folds = 5;
  std::size_t fold_size = 0;  // 0: balanced round-robin folds
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct FoldResult {
  std::size_t index = 0;
  std::string held_out;  // skier id for leave-one-skier-out rounds
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  std::size_t test_size = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

struct ExperimentReport {
  std::string protocol;  // "cross-validation" or "leave-one-skier-out"
  ExperimentConfig config;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  ConfusionMatrix pooled;
  double pooled_accuracy = 0.0;
  double wall_clock_seconds = 0.0;
  std::string started_at;
};

namespace detail {

/// Seeded stratified train/validation split of `pool` (indices into `strokes`).
inline IndexSplit validation_split(std::span<const StrokeSegment> strokes, const std::vector<std::size_t>& pool,
                                   double fraction, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, gear_count> by_gear;
  for (std::size_t i : pool) by_gear[gear_index(strokes[i].gear)].push_back(i);
  std::mt19937_64 rng(seed);
  IndexSplit out;  // .test holds the validation indices
  for (auto& idx : by_gear) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t nval = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    if (nval == 0 && idx.size() >= 2 && fraction > 0) nval = 1;
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::vector<StrokeSegment> gather(std::span<const StrokeSegment> strokes, const std::vector<std::size_t>& idx) {
  std::vector<StrokeSegment> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(strokes[i]);
  return out;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Trains on `pool` minus a validation carve-out and evaluates on `test`. Seeds = base + round.
inline FoldResult run_round(std::span<const StrokeSegment> strokes, const std::vector<std::size_t>& pool,
                            const std::vector<std::size_t>& test, const ExperimentConfig& cfg, std::size_t round,
                            const progress_fn& progress) {
  const std::uint64_t seed = cfg.seed + round;
  const IndexSplit tv = validation_split(strokes, pool, cfg.validation_fraction, seed);
  const auto train_set = gather(strokes, tv.train);
  const auto val_set = gather(strokes, tv.test);
  const auto test_set = gather(strokes, test);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const progress_fn round_progress = progress ? progress_fn([&](std::string_view msg) {
    progress("round " + std::to_string(round + 1) + ": " + std::string(msg));
  })
                                              : progress_fn{};
  TrainResult tr = train(init_model(ModelConfig::defaults(cfg.kind, seed)), train_set, val_set, tc, round_progress);
  const Evaluation ev = evaluate(tr.model, test_set);
  FoldResult f;
  f.index = round;
  f.train_size = train_set.size();
  f.validation_size = val_set.size();
  f.test_size = test_set.size();
  f.best_epoch = tr.best_epoch;
  f.epochs_run = tr.history.size();
  f.accuracy = ev.accuracy;
  f.confusion = ev.confusion;
  return f;
}

inline void finish_report(ExperimentReport& r, std::chrono::steady_clock::time_point start) {
  double sum = 0.0;
  for (const auto& f : r.folds) {
    sum += f.accuracy;
    r.pooled += f.confusion;
  }
  r.mean_accuracy = sum / static_cast<double>(r.folds.size());
  r.pooled_accuracy = r.pooled.accuracy();
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Stratified k-fold cross-validation; each round trains on the other folds (minus a validation share).
inline ExperimentReport run_experiment1(std::span<const StrokeSegment> strokes, const ExperimentConfig& cfg,
                                        const progress_fn& progress = {}) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport r{"cross-validation", cfg, {}, 0, {}, 0, 0, detail::utc_now()};
  const FoldAssignment folds = stratified_folds(strokes, cfg.folds, cfg.seed, cfg.fold_size);
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> pool, test;
    for (std::size_t i = 0; i < strokes.size(); ++i) (folds.fold_of[i] == f ? test : pool).push_back(i);
    r.folds.push_back(detail::run_round(strokes, pool, test, cfg, f, progress));
    if (progress)
      progress("fold " + std::to_string(f + 1) + "/" + std::to_string(cfg.folds) +
               " accuracy " + std::to_string(r.folds.back().accuracy));
  }
  detail::finish_report(r, start);
  return r;
}

/// Leave-one-skier-out. `held_out` names one skier, or "all" to rotate over every skier.
inline ExperimentReport run_experiment2(std::span<const StrokeSegment> strokes, const ExperimentConfig& cfg,
                                        const std::string& held_out = "all", const progress_fn& progress = {}) {
  const auto start = std::chrono::steady_clock::now();
  const auto skiers = skier_ids(strokes);
  if (skiers.size() < 3) throw data_error("leave-one-skier-out experiment needs at least 3 skiers");
  std::vector<std::string> targets = held_out == "all" ? skiers : std::vector<std::string>{held_out};
  ExperimentReport r{"leave-one-skier-out", cfg, {}, 0, {}, 0, 0, detail::utc_now()};
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const IndexSplit split = loso_split(strokes, targets[k]);
    const auto round = static_cast<std::size_t>(std::find(skiers.begin(), skiers.end(), targets[k]) - skiers.begin());
    FoldResult f = detail::run_round(strokes, split.train, split.test, cfg, round, progress);
    f.held_out = targets[k];
    if (progress) progress("held out " + targets[k] + " accuracy " + std::to_string(f.accuracy));
    r.folds.push_back(std::move(f));
  }
  detail::finish_report(r, start);
  return r;
}

// ---- report file --------------------------------------------------------------

inline nlohmann::json confusion_to_json(const ConfusionMatrix& cm) { return cm.counts(); }

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}, {"patience", t.patience}, {"seed", t.seed}};
}

/// Full report. Everything outside "metadata" is a deterministic function of data, config and seed.
inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json support = nlohmann::json::object();
    for (Gear g : all_gears) support[std::string(gear_code(g))] = f.confusion.row_sum(g);
    nlohmann::json jf = {{"index", f.index},           {"train_size", f.train_size},
                         {"validation_size", f.validation_size}, {"test_size", f.test_size},
                         {"best_epoch", f.best_epoch}, {"epochs_run", f.epochs_run},
                         {"accuracy", f.accuracy},     {"support", support},
                         {"confusion", confusion_to_json(f.confusion)}};
    if (!f.held_out.empty()) jf["held_out"] = f.held_out;
    folds.push_back(std::move(jf));
  }
  nlohmann::json per_class = nlohmann::json::object();
  for (Gear g : all_gears)
    per_class[std::string(gear_code(g))] = {{"precision", r.pooled.precision(g)},
                                            {"recall", r.pooled.recall(g)},
                                            {"support", r.pooled.row_sum(g)}};
  const auto model_cfg = ModelConfig::defaults(r.config.kind, r.config.seed);
  return {{"protocol", r.protocol},
          {"model", kind_name(r.config.kind)},
          {"seed", r.config.seed},
          {"config",
           {{"model", model_config_to_json(model_cfg)},
            {"train", train_config_to_json(r.config.train)},
            {"folds", r.config.folds},
            {"fold_size", r.config.fold_size},
            {"validation_fraction", r.config.validation_fraction}}},
          {"fold_accuracies",
           [&] {
             std::vector<double> a;
             for (const auto& f : r.folds) a.push_back(f.accuracy);
             return a;
           }()},
          {"mean_accuracy", r.mean_accuracy},
          {"folds", std::move(folds)},
          {"confusion", confusion_to_json(r.pooled)},
          {"pooled_accuracy", r.pooled_accuracy},
          {"per_class", std::move(per_class)},
          {"metadata", {{"wall_clock_seconds", r.wall_clock_seconds}, {"started_at", r.started_at}}}};
}

/// The report without its metadata block, for reproducibility comparisons.
inline nlohmann::json deterministic_part(nlohmann::json report) {
  report.erase("metadata");
  return report;
}

}  // namespace skigear
