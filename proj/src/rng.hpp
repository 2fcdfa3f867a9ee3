#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace metacsi {

using Rng = std::mt19937_64;

// Stream tags keep substreams for different consumers of one seed apart.
enum class Stream : std::uint64_t {
    packet = 1,
    boundary_offset = 2,
    scene = 3,
    environment = 4,
    init = 5,
    shuffle = 6,
    adapt_pick = 7,
    interferer = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream tag, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
    h = splitmix64(h ^ a);
    return splitmix64(h ^ (b * 0x2545f4914f6cdd1dULL));
}

inline Rng substream(std::uint64_t seed, Stream tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(derive_seed(seed, tag, a, b));
}

// Distribution helpers with fixed formulas so results do not depend on the
// standard library's distribution implementations.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline double gaussian(Rng& rng) {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace metacsi
