#pragma once

// Parametric generator of labelled 50 Hz pole-sensor sessions.
//
// A session is a train of poling cycles. Each cycle starts with ground contact (half-sine pole
// force) and ends with an air phase in which both forces stay below 0.1 N, so threshold
// segmentation finds one falling edge per cycle. A session of n strokes holds n + 1 cycles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skigear/ingest.hpp"

namespace skigear {

/// One simulated skier. noise_sd scales both the additive sensor noise and the stroke-to-stroke
/// variation of the gear textures; 0 gives noiseless, repeatable strokes.
struct SkierProfile {
  std::string skier_id = "A";
  double tempo_scale = 1.0;      // multiplies every cycle duration
  double force_scale = 1.0;      // multiplies every force peak
  double asym_bias = 0.0;        // left/right force ratio offset; its sign picks the Gear 2 lead hand
  double phase_jitter_sd = 0.0;  // s, per-cycle duration jitter
  double noise_sd = 0.0;

  void validate() const {
    if (skier_id.empty() || skier_id.find(',') != std::string::npos) throw contract_error("bad skier id '" + skier_id + "'");
    if (!(tempo_scale > 0) || !(force_scale > 0)) throw contract_error("tempo_scale and force_scale must be > 0");
    if (!(noise_sd >= 0) || !(phase_jitter_sd >= 0)) throw contract_error("noise_sd and phase_jitter_sd must be >= 0");
    if (!(std::abs(asym_bias) < 1)) throw contract_error("asym_bias must lie in (-1, 1)");
  }

  friend bool operator==(const SkierProfile&, const SkierProfile&) = default;
};

struct GearTemplate {
  Gear gear = Gear::DoublePoling;
  double cycle_s = 1.2;
  double contact_fraction = 0.35;
  double phase_offset_s = 0.0;  // lag of the trailing pole
  double force_peak = 200.0;    // N
  double asymmetry = 0.0;       // trailing pole force is (1 - asymmetry) of the leading one
  double angle_start = 78.0;    // deg at pole plant
  double angle_end = 20.0;      // deg at pole lift
  double lateral_gyro_amp = 0.0;  // rad/s, oscillation at cycle frequency
  double lateral_gyro_sd = 0.0;   // rad/s per unit noise_sd, stroke-to-stroke amplitude spread
  double lateral_accel_amp = 0.0;  // m/s^2, sign alternates every cycle

  void validate() const {
    if (!(contact_fraction > 0 && contact_fraction < 1)) throw contract_error("contact fraction must lie in (0, 1)");
    if (!(cycle_s > 0) || !(force_peak > 0)) throw contract_error("cycle duration and force peak must be > 0");
    if (!(phase_offset_s >= 0) || phase_offset_s >= cycle_s * (1 - contact_fraction))
      throw contract_error("phase offset must fit inside the air phase");
    if (!(asymmetry >= 0 && asymmetry < 1)) throw contract_error("asymmetry must lie in [0, 1)");
  }
};

inline std::array<GearTemplate, gear_count> default_templates() {
  std::array<GearTemplate, gear_count> t;
  t[0] = {Gear::DoublePoling, 1.2, 0.35, 0.0, 200.0, 0.0, 78.0, 20.0, 0.0, 0.3, 0.0};
  t[1] = {Gear::Gear2, 1.4, 0.30, 0.08, 160.0, 0.15, 70.0, 32.0, 0.0, 0.25, 0.0};
  t[2] = {Gear::Gear3, 1.0, 0.35, 0.0, 190.0, 0.0, 76.0, 22.0, 0.35, 0.35, 0.0};
  t[3] = {Gear::Gear4, 1.1, 0.28, 0.0, 140.0, 0.0, 72.0, 28.0, 0.0, 0.25, 3.0};
  return t;
}

struct SynthEntry {
  SkierProfile profile;
  Gear gear = Gear::DoublePoling;
  std::size_t strokes = 1;
};

struct SynthSpec {
  std::vector<SynthEntry> entries;
  double sample_rate_hz = 50.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (sample_rate_hz != 50.0) throw contract_error("only 50 Hz generation is supported");
    for (const auto& e : entries) {
      e.profile.validate();
      if (e.strokes < 1) throw contract_error("stroke counts must be >= 1");
    }
  }
};

namespace detail {

constexpr double lead_in_s = 0.4;
constexpr double tail_s = 0.2;
constexpr double contact_floor = 2.0;  // N
constexpr double air_ceiling = 0.1;    // N

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace detail

/// A session of `n_strokes` complete strokes. Deterministic in (profile, template, n_strokes, seed).
inline Session generate_session(const SkierProfile& profile, const GearTemplate& tmpl, std::size_t n_strokes,
                                std::uint64_t seed) {
  using namespace detail;
  profile.validate();
  tmpl.validate();
  if (n_strokes < 1) throw contract_error("n_strokes must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double ns = profile.noise_sd;

  // Cycle layout in whole samples, with per-cycle texture draws.
  const std::size_t cycles = n_strokes + 1;
  const double nominal = tmpl.cycle_s * profile.tempo_scale;
  std::vector<long> start(cycles + 1), duration(cycles);
  std::vector<double> gyro_amp(cycles);
  long t = std::lround(lead_in_s / sample_period);
  for (std::size_t k = 0; k < cycles; ++k) {
    const double jitter = profile.phase_jitter_sd > 0 ? profile.phase_jitter_sd * gauss(rng) : 0.0;
    duration[k] = std::lround(std::clamp(nominal + jitter, 0.7 * nominal, 1.3 * nominal) / sample_period);
    gyro_amp[k] = tmpl.lateral_gyro_amp + (ns > 0 ? ns * tmpl.lateral_gyro_sd * gauss(rng) : 0.0);
    start[k] = t;
    t += duration[k];
  }
  start[cycles] = t;
  const auto samples = static_cast<std::size_t>(t + std::lround(tail_s / sample_period));

  // Pole order: the lead hand carries the full force and no lag.
  const bool left_leads = profile.asym_bias >= 0;
  const long offset = std::lround(tmpl.phase_offset_s / sample_period);
  const std::array<long, 2> lag{left_leads ? 0 : offset, left_leads ? offset : 0};
  const double trail = 1.0 - tmpl.asymmetry;
  const std::array<double, 2> amp{(left_leads ? 1.0 : trail) * (1.0 + profile.asym_bias / 2),
                                  (left_leads ? trail : 1.0) * (1.0 - profile.asym_bias / 2)};
  const double peak = tmpl.force_peak * profile.force_scale;
  const std::array<std::size_t, 2> base{channel::force_left, channel::force_right};
  static_assert(channel::force_right - channel::force_left == 8);

  auto noise = [&](double scale) { return ns > 0 ? ns * scale * gauss(rng) : 0.0; };

  Session s{profile.skier_id, tmpl.gear, {}, ""};
  s.samples.resize(samples);
  std::size_t k = 0;  // cycle containing the current sample
  for (std::size_t n = 0; n < samples; ++n) {
    SensorSample& x = s.samples[n];
    const auto i = static_cast<long>(n);
    x.time = static_cast<double>(n) * sample_period;
    while (k < cycles && i >= start[k + 1]) ++k;
    const bool in_cycles = i >= start[0] && k < cycles;
    const double phase = in_cycles ? static_cast<double>(i - start[k]) / static_cast<double>(duration[k]) : 0.0;
    const double lateral_gyro = in_cycles ? gyro_amp[k] * std::sin(2 * std::numbers::pi * phase) : 0.0;
    const double lateral_accel =
        in_cycles ? (k % 2 ? -1.0 : 1.0) * tmpl.lateral_accel_amp * std::sin(std::numbers::pi * phase) : 0.0;

    for (std::size_t p = 0; p < 2; ++p) {
      // Locate the pole's own cycle: its contact window is shifted by its lag.
      const long ip = i - lag[p];
      std::size_t kp = 0;
      while (kp + 1 < cycles && ip >= start[kp + 1]) ++kp;
      const long tau = ip - start[kp];
      const double contact = tmpl.contact_fraction * static_cast<double>(duration[kp]);  // samples
      const double air = static_cast<double>(duration[kp]) - contact;
      const bool before = tau < 0;
      const bool after = kp + 1 == cycles && tau >= duration[kp];
      const bool touching = !before && !after && static_cast<double>(tau) < contact;

      auto* ch = &x.channels[base[p]];
      double force, angle, gyro_sagittal, accel_forward, accel_vertical;
      if (touching) {
        const double u = static_cast<double>(tau) / contact;
        force = std::max(contact_floor, peak * amp[p] * std::sin(std::numbers::pi * u) + noise(1.5));
        angle = tmpl.angle_start + (tmpl.angle_end - tmpl.angle_start) * u;
        gyro_sagittal = deg_to_rad(tmpl.angle_end - tmpl.angle_start) / (contact * sample_period);
        accel_forward = 4.0 * profile.force_scale * amp[p] * std::sin(std::numbers::pi * u);
        accel_vertical = 2.0 * std::sin(std::numbers::pi * u);
      } else {
        force = std::min(air_ceiling, std::abs(noise(0.05)));
        if (before || after) {
          angle = before ? tmpl.angle_start : tmpl.angle_end;
          gyro_sagittal = 0.0;
          accel_forward = 0.0;
        } else {
          const double v = (static_cast<double>(tau) - contact) / air;
          angle = tmpl.angle_end + (tmpl.angle_start - tmpl.angle_end) * v;
          gyro_sagittal = deg_to_rad(tmpl.angle_start - tmpl.angle_end) / (air * sample_period);
          accel_forward = -1.0 * std::sin(std::numbers::pi * v);
        }
        accel_vertical = 0.0;
      }
      ch[0] = force;
      ch[1] = angle + noise(0.5);
      ch[2] = gyro_sagittal + noise(0.05);
      ch[3] = lateral_gyro + noise(0.1);
      ch[4] = noise(0.05);
      ch[5] = accel_forward + noise(0.2);
      ch[6] = lateral_accel + noise(0.2);
      ch[7] = 9.81 + accel_vertical + noise(0.2);
    }
  }
  return s;
}

inline Session generate_session(const SkierProfile& profile, Gear gear, std::size_t n_strokes, std::uint64_t seed) {
  return generate_session(profile, default_templates()[gear_index(gear)], n_strokes, seed);
}

/// Per-session seed derived from the spec seed and the session's position.
inline std::uint64_t session_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::array<std::uint64_t, 1> out{};
  seq.generate(reinterpret_cast<std::uint32_t*>(out.data()), reinterpret_cast<std::uint32_t*>(out.data() + 1));
  return out[0];
}

/// One session per entry; sources are "<skier>_<gear>" with a numeric suffix on repeats.
inline std::vector<Session> generate(const SynthSpec& spec) {
  spec.validate();
  const auto templates = default_templates();
  std::vector<Session> out;
  for (std::size_t i = 0; i < spec.entries.size(); ++i) {
    const auto& e = spec.entries[i];
    Session s = generate_session(e.profile, templates[gear_index(e.gear)], e.strokes, session_seed(spec.seed, i));
    s.source = e.profile.skier_id + "_" + std::string(gear_code(e.gear));
    const auto clash = std::count_if(out.begin(), out.end(), [&](const Session& o) {
      return o.source == s.source || o.source.starts_with(s.source + "_");
    });
    if (clash) s.source += "_" + std::to_string(clash + 1);
    out.push_back(std::move(s));
  }
  return out;
}

inline constexpr std::array<std::size_t, gear_count> paper_scale_gear_totals{586, 252, 473, 360};

/// Three skiers with distinct tempo, force and asymmetry, each recorded once in every gear.
/// Small seeded perturbations are applied around fixed anchors; per-gear totals are split as
/// evenly as possible, earlier skiers taking the remainder.
inline SynthSpec paper_scale_spec(std::uint64_t seed) {
  struct anchor {
    const char* id;
    double tempo, force, asym;
  };
  constexpr std::array<anchor, 3> anchors{{{"A", 0.88, 1.10, 0.04}, {"B", 1.00, 1.00, -0.03}, {"C", 1.14, 0.90, 0.02}}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> wobble(-0.02, 0.02);
  SynthSpec spec;
  spec.seed = seed;
  for (std::size_t s = 0; s < anchors.size(); ++s) {
    SkierProfile p;
    p.skier_id = anchors[s].id;
    p.tempo_scale = anchors[s].tempo * (1 + wobble(rng));
    p.force_scale = anchors[s].force * (1 + wobble(rng));
    p.asym_bias = anchors[s].asym;
    p.phase_jitter_sd = 0.09;
    p.noise_sd = 1.0;
    for (Gear g : all_gears) {
      const std::size_t total = paper_scale_gear_totals[gear_index(g)];
      spec.entries.push_back({p, g, total / 3 + (s < total % 3 ? 1 : 0)});
    }
  }
  return spec;
}

inline std::vector<Session> generate_paper_scale_dataset(std::uint64_t seed) { return generate(paper_scale_spec(seed)); }

// ---- spec file ----------------------------------------------------------------

inline nlohmann::json profile_to_json(const SkierProfile& p) {
  return {{"skier_id", p.skier_id},       {"tempo_scale", p.tempo_scale},
          {"force_scale", p.force_scale}, {"asym_bias", p.asym_bias},
          {"phase_jitter_sd", p.phase_jitter_sd}, {"noise_sd", p.noise_sd}};
}

inline SkierProfile profile_from_json(const nlohmann::json& j) {
  SkierProfile p;
  p.skier_id = j.at("skier_id").get<std::string>();
  p.tempo_scale = j.value("tempo_scale", 1.0);
  p.force_scale = j.value("force_scale", 1.0);
  p.asym_bias = j.value("asym_bias", 0.0);
  p.phase_jitter_sd = j.value("phase_jitter_sd", 0.0);
  p.noise_sd = j.value("noise_sd", 0.0);
  return p;
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& spec) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : spec.entries)
    entries.push_back({{"profile", profile_to_json(e.profile)}, {"gear", gear_code(e.gear)}, {"strokes", e.strokes}});
  return {{"seed", spec.seed}, {"sample_rate_hz", spec.sample_rate_hz}, {"entries", std::move(entries)}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec spec;
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.sample_rate_hz = j.value("sample_rate_hz", 50.0);
    for (const auto& e : j.at("entries")) {
      const auto strokes = e.at("strokes").get<std::int64_t>();
      if (strokes < 1) throw contract_error("stroke counts must be >= 1");
      spec.entries.push_back(
          {profile_from_json(e.at("profile")), parse_gear(e.at("gear").get<std::string>()), static_cast<std::size_t>(strokes)});
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad synth spec: ") + e.what());
  }
}

inline SynthSpec load_synth_spec(const std::string& path) {
  try {
    return synth_spec_from_json(nlohmann::json::parse(csv::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("bad synth spec '" + path + "': " + e.what());
  }
}

}  // namespace skigear
