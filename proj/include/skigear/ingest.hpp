#pragma once

// Pole-sensor sessions: the 17-column CSV layout (time + 16 channels) and the
// path,skier_id,gear manifest that catalogs them.

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "skigear/csv.hpp"
#include "skigear/gear.hpp"

namespace skigear {

inline constexpr std::size_t channel_count = 16;
inline constexpr double sample_period = 0.02;  // 50 Hz

/// Channel positions, time column excluded.
namespace channel {
inline constexpr std::size_t force_left = 0;
inline constexpr std::size_t angle_left = 1;
inline constexpr std::size_t gyro_left = 2;   // x, y, z
inline constexpr std::size_t accel_left = 5;  // x, y, z
inline constexpr std::size_t force_right = 8;
inline constexpr std::size_t angle_right = 9;
inline constexpr std::size_t gyro_right = 10;
inline constexpr std::size_t accel_right = 13;
}  // namespace channel

inline constexpr std::array<std::string_view, channel_count + 1> session_columns{
    "time",         "force_left",   "angle_left",   "gyro_left_x",  "gyro_left_y",  "gyro_left_z",
    "accel_left_x", "accel_left_y", "accel_left_z", "force_right",  "angle_right",  "gyro_right_x",
    "gyro_right_y", "gyro_right_z", "accel_right_x", "accel_right_y", "accel_right_z"};

/// One 50 Hz frame. Forces in N, angles in degrees, angular velocity in rad/s, acceleration in m/s^2.
struct SensorSample {
  double time = 0.0;
  std::array<double, channel_count> channels{};

  double force_left() const { return channels[channel::force_left]; }
  double force_right() const { return channels[channel::force_right]; }
  double angle_left() const { return channels[channel::angle_left]; }
  double angle_right() const { return channels[channel::angle_right]; }

  friend bool operator==(const SensorSample&, const SensorSample&) = default;
};

/// A continuous single-gear recording of one skier.
struct Session {
  std::string skier_id;
  Gear gear = Gear::DoublePoling;
  std::vector<SensorSample> samples;
  std::string source;

  friend bool operator==(const Session&, const Session&) = default;
};

/// Checks the session invariants: non-empty, finite, time strictly increasing at 0.02 s +/- 10%.
inline void validate_session(const Session& s) {
  const std::string where = s.source.empty() ? "session" : "'" + s.source + "'";
  if (s.samples.empty()) throw data_error(where + ": session has no samples");
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    const auto& x = s.samples[i];
    if (!std::isfinite(x.time)) throw data_error(where + ": non-finite time at sample " + std::to_string(i));
    for (double v : x.channels)
      if (!std::isfinite(v)) throw data_error(where + ": non-finite value at sample " + std::to_string(i));
    if (i > 0) {
      const double step = x.time - s.samples[i - 1].time;
      if (!(step >= 0.9 * sample_period && step <= 1.1 * sample_period))
        throw data_error(where + ": time step " + std::to_string(step) + " s at sample " + std::to_string(i) +
                         " is not 0.02 s +/- 10%");
    }
  }
}

/// Parses a session CSV. A first line whose first field is not numeric is treated as a header.
inline Session parse_session_text(std::string_view text, std::string skier_id, Gear gear, std::string source = {}) {
  Session s{std::move(skier_id), gear, {}, std::move(source)};
  const auto rows = csv::lines(text);
  if (rows.empty()) throw format_error("'" + s.source + "': empty session file");
  std::size_t first = 0;
  if (!csv::to_double(csv::split(rows[0].second).front())) first = 1;
  for (std::size_t r = first; r < rows.size(); ++r) {
    const auto [line_no, line] = rows[r];
    const auto fields = csv::split(line);
    if (fields.size() != channel_count + 1)
      throw format_error("'" + s.source + "' row " + std::to_string(line_no) + ": expected 17 columns, got " +
                         std::to_string(fields.size()));
    SensorSample sample;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = csv::to_double(fields[c]);
      if (!v)
        throw parse_error("'" + s.source + "' row " + std::to_string(line_no) + " column " + std::to_string(c + 1) +
                          ": cannot parse '" + std::string(fields[c]) + "' as a number");
      (c == 0 ? sample.time : sample.channels[c - 1]) = *v;
    }
    s.samples.push_back(sample);
  }
  if (s.samples.empty()) throw format_error("'" + s.source + "': no data rows");
  validate_session(s);
  return s;
}

inline Session parse_session_csv(const std::string& path, std::string skier_id, Gear gear) {
  return parse_session_text(csv::read_file(path), std::move(skier_id), gear, path);
}

inline std::string session_to_csv(const Session& s) {
  if (s.samples.empty()) throw data_error("refusing to write an empty session");
  std::string out;
  out.reserve(s.samples.size() * 17 * 12);
  for (std::size_t c = 0; c < session_columns.size(); ++c) {
    if (c) out += ',';
    out += session_columns[c];
  }
  out += '\n';
  for (const auto& x : s.samples) {
    out += csv::format_double(x.time);
    for (double v : x.channels) {
      out += ',';
      out += csv::format_double(v);
    }
    out += '\n';
  }
  return out;
}

/// Writes header + one row per sample. Values use shortest round-trip formatting.
inline void write_session_csv(const Session& s, const std::string& path) { csv::write_file(path, session_to_csv(s)); }

struct ManifestEntry {
  std::string path;
  std::string skier_id;
  Gear gear = Gear::DoublePoling;
};

inline std::vector<ManifestEntry> parse_manifest_text(std::string_view text, const std::string& where = "manifest") {
  std::vector<ManifestEntry> entries;
  const auto rows = csv::lines(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto [line_no, line] = rows[r];
    const auto fields = csv::split(line);
    if (r == 0 && fields.size() == 3 && fields[0] == "path" && fields[1] == "skier_id" && fields[2] == "gear") continue;
    if (fields.size() != 3)
      throw format_error(where + " row " + std::to_string(line_no) + ": expected path,skier_id,gear");
    entries.push_back({std::string(fields[0]), std::string(fields[1]), parse_gear(fields[2])});
  }
  return entries;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::string out = "path,skier_id,gear\n";
  for (const auto& e : entries) out += e.path + "," + e.skier_id + "," + std::string(gear_code(e.gear)) + "\n";
  csv::write_file(path, out);
}

/// All sessions of a manifest, loaded and validated.
struct Catalog {
  std::vector<Session> sessions;

  /// Sample counts are not interesting here; this counts sessions per (skier, gear).
  std::map<std::pair<std::string, Gear>, std::size_t> session_counts() const {
    std::map<std::pair<std::string, Gear>, std::size_t> counts;
    for (const auto& s : sessions) ++counts[{s.skier_id, s.gear}];
    return counts;
  }
};

/// Loads every session listed in a manifest. Relative paths resolve against the manifest's directory.
/// Duplicate entries are loaded again with a warning.
inline Catalog load_catalog(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const auto entries = parse_manifest_text(csv::read_file(manifest_path), "'" + manifest_path + "'");
  const fs::path base = fs::path(manifest_path).parent_path();
  Catalog catalog;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    fs::path p(e.path);
    if (p.is_relative()) p = base / p;
    const std::string resolved = p.lexically_normal().string();
    if (!fs::exists(p)) throw io_error("manifest entry '" + e.path + "': file not found (" + resolved + ")");
    if (!seen.insert(resolved).second) warn("duplicate manifest entry '" + e.path + "' loaded again");
    catalog.sessions.push_back(parse_session_csv(resolved, e.skier_id, e.gear));
  }
  return catalog;
}

}  // namespace skigear
