#pragma once

#include <cstdint>
#include <random>

namespace specdown {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for stream `index` of purpose `stream` under a master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) {
    return mix_seed(mix_seed(master ^ mix_seed(stream)) + index);
}

// Stream tags.
namespace streams {
inline constexpr std::uint64_t batch = 1;
inline constexpr std::uint64_t fold = 2;
inline constexpr std::uint64_t predict = 3;
inline constexpr std::uint64_t simulate = 4;
inline constexpr std::uint64_t ols_draws = 5;
}  // namespace streams

inline double std_normal(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return n(rng);
}

}  // namespace specdown
