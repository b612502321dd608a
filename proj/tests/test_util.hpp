#pragma once

#include <cmath>
#include <random>

#include "fbwc/rng.hpp"
#include "fbwc/tensor.hpp"

namespace test_util {

inline fbwc::Tensor rand_tensor(fbwc::Shape s, std::mt19937_64& g, double lo = -1.0, double hi = 1.0) {
    fbwc::Tensor t(s);
    fbwc::scalar* d = t.mut();
    for (fbwc::index_t i = 0; i < t.numel(); ++i)
        d[i] = static_cast<fbwc::scalar>(fbwc::rng_range(g, lo, hi));
    return t;
}

inline fbwc::Tensor rand_mask(fbwc::Shape s, std::mt19937_64& g, double p = 0.5) {
    fbwc::Tensor t(s);
    fbwc::scalar* d = t.mut();
    for (fbwc::index_t i = 0; i < t.numel(); ++i)
        d[i] = fbwc::rng_uniform(g) < p ? fbwc::scalar(1) : fbwc::scalar(0);
    return t;
}

inline double max_abs_diff(const fbwc::Tensor& a, const fbwc::Tensor& b) {
    if (!(a.shape == b.shape)) return 1e30;
    double m = 0.0;
    for (fbwc::index_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i])));
    return m;
}

inline double max_abs(const std::vector<fbwc::scalar>& v) {
    double m = 0.0;
    for (fbwc::scalar x : v) m = std::max(m, std::abs(static_cast<double>(x)));
    return m;
}

}  // namespace test_util
