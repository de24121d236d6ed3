#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "skigear/error.hpp"

namespace skigear {

/// The four classified techniques. The numeric value is the class index.
enum class Gear : std::uint8_t { DoublePoling = 0, Gear2 = 1, Gear3 = 2, Gear4 = 3 };

inline constexpr std::size_t gear_count = 4;
inline constexpr std::array<Gear, gear_count> all_gears{Gear::DoublePoling, Gear::Gear2, Gear::Gear3, Gear::Gear4};

constexpr std::size_t gear_index(Gear g) noexcept { return static_cast<std::size_t>(g); }

inline Gear gear_from_index(std::size_t i) {
  if (i >= gear_count) throw data_error("gear index out of range: " + std::to_string(i));
  return static_cast<Gear>(i);
}

/// Short code used in every file format: DP, G2, G3, G4.
constexpr std::string_view gear_code(Gear g) noexcept {
  constexpr std::array<std::string_view, gear_count> codes{"DP", "G2", "G3", "G4"};
  return codes[gear_index(g)];
}

/// Case-insensitive inverse of gear_code().
inline Gear parse_gear(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (Gear g : all_gears)
    if (upper == gear_code(g)) return g;
  throw data_error("unknown gear '" + std::string(text) + "' (expected DP, G2, G3 or G4)");
}

}  // namespace skigear
