#pragma once

// Portable draws on top of std::mt19937_64, whose output sequence the standard fixes.
// The standard distributions are implementation-defined, so fixtures and seeded runs
// use these instead to stay byte-identical across toolchains.

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace vpv::rnd {

using Engine = std::mt19937_64;

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Uniform integer in [0, n). n must be positive.
inline std::uint64_t below(Engine &g, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = g();
    while (x >= limit) {
        x = g();
    }
    return x % n;
}

/// Uniform double in [0, 1).
inline double unit(Engine &g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

inline double uniform(Engine &g, double lo, double hi) { return lo + (hi - lo) * unit(g); }

inline bool bernoulli(Engine &g, double p) { return unit(g) < p; }

template <class T> void shuffle(std::vector<T> &v, Engine &g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = below(g, i);
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace vpv::rnd
