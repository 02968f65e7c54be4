#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vqasc {

using Rng = std::mt19937_64;

/// Stream seed for (root, purpose, index): FNV-1a over the purpose label,
/// mixed with the root and index through SplitMix64 finalisers.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0)
{
    return Rng(derive_seed(root, purpose, index));
}

/// Uniform draw on the open interval (0, 1).
double uniform_open(Rng& rng);

/// Standard normal via Box-Muller on uniform_open, so streams are
/// reproducible across standard libraries.
double standard_normal(Rng& rng);

}  // namespace vqasc
