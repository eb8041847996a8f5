#pragma once

#include <cstdint>

namespace rfelut {

/// SplitMix64 finalizer. Used as a counter-based source so that per-site
/// training noise is independent of evaluation order.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) noexcept {
    return mix64(seed ^ mix64(v));
}

/// Uniform in (-1/2, 1/2), keyed by (seed, counter).
constexpr double centered_uniform(std::uint64_t seed, std::uint64_t counter) noexcept {
    const std::uint64_t bits = hash_combine(seed, counter) >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53 - 0.5;
}

}  // namespace rfelut
