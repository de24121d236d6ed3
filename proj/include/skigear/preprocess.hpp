#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skigear/csv.hpp"
#include "skigear/gear.hpp"
#include "skigear/ingest.hpp"
#include "skigear/tensor.hpp"

namespace skigear {

struct PreprocessConfig {
  double threshold = 0.4;            // N
  std::size_t target_length = 140;   // time steps
  std::size_t smooth_window = 5;     // samples, odd
  std::size_t min_stroke_len = 10;   // samples

  void validate() const {
    if (!(threshold > 0.0)) throw contract_error("threshold must be > 0");
    if (min_stroke_len < 1) throw contract_error("min_stroke_len must be >= 1");
    if (target_length < min_stroke_len) throw contract_error("target_length must be >= min_stroke_len");
    if (smooth_window < 1 || smooth_window % 2 == 0) throw contract_error("smooth_window must be odd and >= 1");
  }
};

/// One pole push, zero padded to a fixed number of rows.
struct StrokeSegment {
  Tensor matrix;  // [target_length x 16], channel order of the session CSV without time
  std::size_t true_length = 0;
  Gear gear = Gear::DoublePoling;
  std::string skier_id;
  std::string source;

  friend bool operator==(const StrokeSegment&, const StrokeSegment&) = default;
};

/// Centered moving average per channel. Windows shrink at the edges; timestamps are kept.
inline Session smooth(const Session& in, std::size_t window) {
  if (window < 1 || window % 2 == 0) throw contract_error("smooth window must be odd and >= 1");
  Session out = in;
  if (window == 1) return out;
  const std::size_t n = in.samples.size();
  const std::size_t half = window / 2;
  for (std::size_t c = 0; c < channel_count; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = i >= half ? i - half : 0;
      const std::size_t hi = std::min(n, i + half + 1);
      double s = 0.0;
      for (std::size_t j = lo; j < hi; ++j) s += in.samples[j].channels[c];
      out.samples[i].channels[c] = s / static_cast<double>(hi - lo);
    }
  }
  return out;
}

/// max(|force_left|, |force_right|) per sample.
inline std::vector<double> combined_force(const Session& s) {
  std::vector<double> f(s.samples.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = std::max(std::abs(s.samples[i].force_left()), std::abs(s.samples[i].force_right()));
  return f;
}

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t length() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// Partition of a timeline into complete strokes and discarded pieces, both in time order.
struct StrokeSpans {
  std::vector<Span> strokes;
  std::vector<Span> discarded;
};

/// Split points are falling edges f[t-1] >= T, f[t] < T. Each stroke runs from one split point
/// to the next; the pieces before the first and after the last split point are discarded, as
/// are strokes shorter than `min_len`.
inline StrokeSpans find_stroke_spans(std::span<const double> force, double threshold, std::size_t min_len) {
  std::vector<std::size_t> edges;
  for (std::size_t t = 1; t < force.size(); ++t)
    if (force[t - 1] >= threshold && force[t] < threshold) edges.push_back(t);
  StrokeSpans out;
  const std::size_t n = force.size();
  if (edges.empty()) {
    if (n) out.discarded.push_back({0, n});
    return out;
  }
  if (edges.front() > 0) out.discarded.push_back({0, edges.front()});
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const Span s{edges[i], edges[i + 1]};
    (s.length() >= min_len ? out.strokes : out.discarded).push_back(s);
  }
  if (edges.back() < n) out.discarded.push_back({edges.back(), n});
  return out;
}

/// Copies `rows` (a [T x 16] tensor, T >= 1) into a zero-padded [L x 16] matrix; longer inputs keep
/// their first L rows. Returns the matrix and the number of real rows.
inline std::pair<Tensor, std::size_t> pad_stroke(const Tensor& rows, std::size_t target_length = 140) {
  if (rows.rank() != 2 || rows.dim(1) != channel_count || rows.dim(0) < 1)
    throw dimension_error("pad_stroke expects [T x 16] with T >= 1, got " + to_string(rows.shape()));
  const std::size_t t = rows.dim(0);
  const std::size_t keep = std::min(t, target_length);
  if (t > target_length)
    warn("stroke of " + std::to_string(t) + " samples truncated to " + std::to_string(target_length));
  Tensor out({target_length, channel_count});
  std::copy_n(rows.data().begin(), keep * channel_count, out.data().begin());
  return {std::move(out), keep};
}

/// Strokes of an (already smoothed) session.
inline std::vector<StrokeSegment> segment_strokes(const Session& session, const PreprocessConfig& cfg = {}) {
  cfg.validate();
  const auto force = combined_force(session);
  const auto spans = find_stroke_spans(force, cfg.threshold, cfg.min_stroke_len);
  std::vector<StrokeSegment> out;
  out.reserve(spans.strokes.size());
  for (const Span& sp : spans.strokes) {
    Tensor raw({sp.length(), channel_count});
    for (std::size_t i = 0; i < sp.length(); ++i)
      std::copy(session.samples[sp.begin + i].channels.begin(), session.samples[sp.begin + i].channels.end(),
                raw.data().begin() + static_cast<std::ptrdiff_t>(i * channel_count));
    auto [matrix, len] = pad_stroke(raw, cfg.target_length);
    out.push_back({std::move(matrix), len, session.gear, session.skier_id,
                   session.source + "@" + std::to_string(sp.begin)});
  }
  return out;
}

/// smooth() followed by segment_strokes().
inline std::vector<StrokeSegment> extract_strokes(const Session& session, const PreprocessConfig& cfg = {}) {
  cfg.validate();
  return segment_strokes(smooth(session, cfg.smooth_window), cfg);
}

inline Tensor encode_label(Gear g) {
  Tensor t({gear_count});
  t[gear_index(g)] = 1.0;
  return t;
}

/// Arg-max of a 4-vector; ties go to the lowest index.
inline Gear decode_label(std::span<const double> v) {
  if (v.size() != gear_count) throw dimension_error("decode_label expects 4 values, got " + std::to_string(v.size()));
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return gear_from_index(best);
}

/// Per-channel standardisation statistics.
struct Normalizer {
  std::array<double, channel_count> mean{};
  std::array<double, channel_count> std{};

  static constexpr double std_floor = 1e-8;

  static Normalizer identity() {
    Normalizer n;
    n.std.fill(1.0);
    return n;
  }

  /// Normalises the real rows of a stroke; padding rows stay exactly zero.
  StrokeSegment apply(StrokeSegment s) const {
    for (std::size_t r = 0; r < s.true_length; ++r)
      for (std::size_t c = 0; c < channel_count; ++c) s.matrix.at(r, c) = (s.matrix.at(r, c) - mean[c]) / std[c];
    return s;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

/// Mean and population standard deviation over the non-padded rows of `strokes`.
inline Normalizer fit_normalizer(std::span<const StrokeSegment> strokes) {
  std::size_t rows = 0;
  Normalizer n;
  for (const auto& s : strokes)
    for (std::size_t r = 0; r < s.true_length; ++r, ++rows)
      for (std::size_t c = 0; c < channel_count; ++c) n.mean[c] += s.matrix.at(r, c);
  if (rows == 0) throw data_error("cannot fit a normalizer on an empty stroke set");
  for (double& m : n.mean) m /= static_cast<double>(rows);
  for (const auto& s : strokes)
    for (std::size_t r = 0; r < s.true_length; ++r)
      for (std::size_t c = 0; c < channel_count; ++c) {
        const double d = s.matrix.at(r, c) - n.mean[c];
        n.std[c] += d * d;
      }
  for (double& v : n.std) v = std::max(std::sqrt(v / static_cast<double>(rows)), Normalizer::std_floor);
  return n;
}

/// fold_of[i] is the fold index of stroke i.
struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> fold_of;

  std::vector<std::size_t> members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == fold) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(k, 0);
    for (std::size_t f : fold_of) ++out[f];
    return out;
  }

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

namespace detail {

/// Largest-remainder apportionment of `total` over `weights`; ties favour the lower index.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
  const double sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::size_t{0}));
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    out[i] = static_cast<std::size_t>(std::floor(quota));
    assigned += out[i];
    rem.emplace_back(quota - std::floor(quota), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[rem[i % rem.size()].second];
  return out;
}

}  // namespace detail

/// Stratified k-fold assignment.
///
/// Each gear's strokes are shuffled with `seed`. With `fold_size == 0` every gear is dealt
/// round-robin over the k folds and the per-gear remainder goes to the last fold. With a
/// positive `fold_size`, folds 0..k-2 each receive exactly `fold_size` strokes apportioned over
/// gears by their global proportions, and the last fold receives everything left.
inline FoldAssignment stratified_folds(std::span<const Gear> labels, std::size_t k, std::uint64_t seed,
                                       std::size_t fold_size = 0) {
  if (k < 2) throw contract_error("fold count must be >= 2");
  std::array<std::vector<std::size_t>, gear_count> by_gear;
  for (std::size_t i = 0; i < labels.size(); ++i) by_gear[gear_index(labels[i])].push_back(i);
  for (Gear g : all_gears)
    if (by_gear[gear_index(g)].size() < k)
      throw data_error("gear " + std::string(gear_code(g)) + " has " + std::to_string(by_gear[gear_index(g)].size()) +
                       " strokes, fewer than the " + std::to_string(k) + " folds");

  std::mt19937_64 rng(seed);
  for (auto& idx : by_gear) std::shuffle(idx.begin(), idx.end(), rng);

  FoldAssignment out{k, std::vector<std::size_t>(labels.size(), k - 1)};
  if (fold_size == 0) {
    for (const auto& idx : by_gear) {
      const std::size_t dealt = idx.size() / k * k;
      for (std::size_t j = 0; j < dealt; ++j) out.fold_of[idx[j]] = j % k;
    }
    return out;
  }

  if (fold_size * (k - 1) >= labels.size())
    throw contract_error("fold size " + std::to_string(fold_size) + " leaves nothing for the last fold");
  std::vector<std::size_t> counts;
  for (const auto& idx : by_gear) counts.push_back(idx.size());
  const auto quota = detail::apportion(fold_size, counts);
  for (std::size_t g = 0; g < gear_count; ++g) {
    if (quota[g] * (k - 1) > counts[g])
      throw data_error("gear " + std::string(gear_code(gear_from_index(g))) + " cannot fill " + std::to_string(k - 1) +
                       " folds of size " + std::to_string(fold_size));
    for (std::size_t j = 0; j < quota[g] * (k - 1); ++j) out.fold_of[by_gear[g][j]] = j / quota[g];
  }
  return out;
}

inline FoldAssignment stratified_folds(std::span<const StrokeSegment> strokes, std::size_t k, std::uint64_t seed,
                                       std::size_t fold_size = 0) {
  std::vector<Gear> labels;
  for (const auto& s : strokes) labels.push_back(s.gear);
  return stratified_folds(std::span<const Gear>(labels), k, seed, fold_size);
}

struct IndexSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Leave-one-skier-out: test = every stroke of `held_out`, train = the rest.
inline IndexSplit loso_split(std::span<const StrokeSegment> strokes, const std::string& held_out) {
  std::set<std::string> skiers;
  for (const auto& s : strokes) skiers.insert(s.skier_id);
  if (skiers.size() < 2) throw data_error("leave-one-skier-out needs at least 2 skiers");
  if (!skiers.contains(held_out)) throw data_error("unknown skier '" + held_out + "'");
  IndexSplit split;
  for (std::size_t i = 0; i < strokes.size(); ++i) (strokes[i].skier_id == held_out ? split.test : split.train).push_back(i);
  return split;
}

inline std::vector<std::string> skier_ids(std::span<const StrokeSegment> strokes) {
  std::set<std::string> ids;
  for (const auto& s : strokes) ids.insert(s.skier_id);
  return {ids.begin(), ids.end()};
}

inline std::array<std::size_t, gear_count> gear_counts(std::span<const StrokeSegment> strokes) {
  std::array<std::size_t, gear_count> n{};
  for (const auto& s : strokes) ++n[gear_index(s.gear)];
  return n;
}

// Stroke archive: one CSV row per stroke, skier_id,gear,true_length,source followed by the
// row-major stroke matrix.

inline std::string stroke_archive_to_csv(std::span<const StrokeSegment> strokes) {
  std::string out = "skier_id,gear,true_length,source";
  const std::size_t width = strokes.empty() ? 140 * channel_count : strokes.front().matrix.size();
  for (std::size_t i = 0; i < width; ++i) out += ",v" + std::to_string(i);
  out += '\n';
  for (const auto& s : strokes) {
    if (s.matrix.size() != width) throw dimension_error("stroke archive rows must all have the same length");
    std::string source = s.source;
    std::replace(source.begin(), source.end(), ',', ';');
    out += s.skier_id + "," + std::string(gear_code(s.gear)) + "," + std::to_string(s.true_length) + "," + source;
    for (double v : s.matrix.values()) {
      out += ',';
      out += csv::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline void write_stroke_archive(std::span<const StrokeSegment> strokes, const std::string& path) {
  csv::write_file(path, stroke_archive_to_csv(strokes));
}

inline std::vector<StrokeSegment> parse_stroke_archive(std::string_view text, const std::string& where = "archive") {
  std::vector<StrokeSegment> out;
  const auto rows = csv::lines(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto [line_no, line] = rows[r];
    if (r == 0 && line.starts_with("skier_id,")) continue;
    const auto fields = csv::split(line);
    const std::size_t values = fields.size() >= 4 ? fields.size() - 4 : 0;
    if (values == 0 || values % channel_count != 0)
      throw format_error(where + " row " + std::to_string(line_no) + ": expected 4 metadata fields and a multiple of " +
                         std::to_string(channel_count) + " values");
    StrokeSegment s;
    s.skier_id = std::string(fields[0]);
    s.gear = parse_gear(fields[1]);
    const auto len = csv::to_double(fields[2]);
    if (!len || *len < 1 || *len != std::floor(*len))
      throw parse_error(where + " row " + std::to_string(line_no) + ": bad true_length '" + std::string(fields[2]) + "'");
    s.true_length = static_cast<std::size_t>(*len);
    s.source = std::string(fields[3]);
    std::vector<double> data(values);
    for (std::size_t i = 0; i < values; ++i) {
      const auto v = csv::to_double(fields[4 + i]);
      if (!v)
        throw parse_error(where + " row " + std::to_string(line_no) + " column " + std::to_string(5 + i) +
                          ": cannot parse '" + std::string(fields[4 + i]) + "'");
      data[i] = *v;
    }
    s.matrix = Tensor({values / channel_count, channel_count}, std::move(data));
    if (s.true_length > s.matrix.dim(0))
      throw format_error(where + " row " + std::to_string(line_no) + ": true_length exceeds stroke rows");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<StrokeSegment> read_stroke_archive(const std::string& path) {
  return parse_stroke_archive(csv::read_file(path), "'" + path + "'");
}

}  // namespace skigear
