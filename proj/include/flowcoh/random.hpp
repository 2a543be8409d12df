#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace flowcoh {

using Rng = std::mt19937_64;

/// Stable sub-seed for (master seed, pipeline stage, item index). Independent
/// of thread scheduling, so concurrent work stays reproducible.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                          std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view stage,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(master, stage, index));
}

/// Uniform double in the open interval (0, 1); 53 random bits.
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace flowcoh
