#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace leafbench {

// std::shuffle and std::uniform_int_distribution are implementation-defined,
// so split and epoch orderings use these instead to stay identical across
// standard libraries.

inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % bound;
  std::uint64_t draw;
  do {
    draw = gen();
  } while (draw >= limit);
  return draw % bound;
}

template <typename T>
void fisher_yates(std::span<T> items, std::mt19937_64& gen) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(gen, i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Uniform real in [0, 1) from the top 53 bits of one draw.
inline double uniform_unit(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller; portable unlike std::normal_distribution.
inline double standard_normal(std::mt19937_64& gen) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u1 = uniform_unit(gen);
  while (u1 <= 0.0) u1 = uniform_unit(gen);
  const double u2 = uniform_unit(gen);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace leafbench
