#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedanchor {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream identifiers (round, client id, purpose tag)
/// into an independent 64-bit seed. Pure function; every random stream in a
/// simulation is derived this way so results do not depend on scheduling.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> stream) {
  return Rng{derive_seed(base, stream)};
}

/// Purpose tags for derive_seed. Values are part of the reproducibility
/// contract; do not renumber.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t blobs_train = 2;
inline constexpr std::uint64_t blobs_test = 3;
inline constexpr std::uint64_t anchor_split = 4;
inline constexpr std::uint64_t partition = 5;
inline constexpr std::uint64_t pretrain = 6;
inline constexpr std::uint64_t selection = 7;
inline constexpr std::uint64_t client = 8;
inline constexpr std::uint64_t server = 9;
}  // namespace stream

/// Beta(a, b) via the ratio of two Gamma draws.
double sample_beta(double a, double b, Rng& rng);

double sample_standard_normal(Rng& rng);

double sample_uniform01(Rng& rng);

}  // namespace fedanchor
