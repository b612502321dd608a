#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fbwc {

// Uniform draws mapped from raw engine output so sequences depend only on the
// seed, not on the standard library's distribution internals.
inline double rng_uniform(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double rng_range(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * rng_uniform(g);
}

// Inclusive integer range.
inline int rng_int(std::mt19937_64& g, int lo, int hi) {
    const int span = hi - lo + 1;
    return lo + static_cast<int>(rng_uniform(g) * span) % span;
}

inline bool rng_bernoulli(std::mt19937_64& g, double p) {
    return rng_uniform(g) < p;
}

// Box-Muller; consumes two draws per call.
inline double rng_normal(std::mt19937_64& g) {
    const double u1 = std::max(rng_uniform(g), 1e-12);
    const double u2 = rng_uniform(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename T>
void rng_shuffle(std::mt19937_64& g, std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = rng_int(g, 0, i);
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
}

}  // namespace fbwc
