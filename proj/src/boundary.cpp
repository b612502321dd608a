#include "fbwc/boundary.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fbwc/ops.hpp"

namespace fbwc {

namespace {

// All per-pixel accumulations below group horizontally mirrored taps into
// commutative pair sums first, so a horizontally flipped input yields the
// bitwise-flipped result and the edge map commutes with flips exactly.

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// 5x5 Gaussian, sigma 1.4, replicate border.
void gauss5(const scalar* src, int h, int w, std::vector<double>& dst) {
    double g[3];
    for (int i = 0; i < 3; ++i) g[i] = std::exp(-static_cast<double>(i * i) / (2.0 * 1.4 * 1.4));
    const double gsum = g[0] + 2.0 * g[1] + 2.0 * g[2];
    const double norm = gsum * gsum;
    dst.assign(static_cast<std::size_t>(h) * w, 0.0);
    auto px = [&](int y, int x) {
        return static_cast<double>(src[static_cast<index_t>(clampi(y, 0, h - 1)) * w + clampi(x, 0, w - 1)]);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -2; dy <= 2; ++dy) {
                double row = g[0] * px(y + dy, x);
                row += g[1] * (px(y + dy, x - 1) + px(y + dy, x + 1));
                row += g[2] * (px(y + dy, x - 2) + px(y + dy, x + 2));
                acc += g[std::abs(dy)] * row;
            }
            dst[static_cast<std::size_t>(y) * w + x] = acc / norm;
        }
    }
}

struct Gradients {
    std::vector<double> gx, gy, mag;
    double max_mag = 0.0;
};

Gradients sobel(const std::vector<double>& b, int h, int w) {
    Gradients out;
    out.gx.assign(b.size(), 0.0);
    out.gy.assign(b.size(), 0.0);
    out.mag.assign(b.size(), 0.0);
    auto px = [&](int y, int x) {
        return b[static_cast<std::size_t>(clampi(y, 0, h - 1)) * w + clampi(x, 0, w - 1)];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dm = px(y - 1, x + 1) - px(y - 1, x - 1);
            const double d0 = px(y, x + 1) - px(y, x - 1);
            const double dp = px(y + 1, x + 1) - px(y + 1, x - 1);
            const double gx = dm + 2.0 * d0 + dp;
            const double rm = (px(y - 1, x - 1) + px(y - 1, x + 1)) + 2.0 * px(y - 1, x);
            const double rp = (px(y + 1, x - 1) + px(y + 1, x + 1)) + 2.0 * px(y + 1, x);
            const double gy = rp - rm;
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            out.gx[i] = gx;
            out.gy[i] = gy;
            out.mag[i] = std::sqrt(gx * gx + gy * gy);
            if (out.mag[i] > out.max_mag) out.max_mag = out.mag[i];
        }
    }
    return out;
}

// Four-direction non-maximum suppression. The comparison is anchored to the
// gradient's sign along the quantized axis: strict against the lower-
// intensity side, ties allowed toward the higher-intensity side, which keeps
// ridges one pixel wide deterministically.
std::vector<char> nms(const Gradients& g, int h, int w) {
    constexpr double t1 = 0.4142135623730950;  // tan(pi/8)
    constexpr double t2 = 2.4142135623730951;  // tan(3*pi/8)
    std::vector<char> keep(g.mag.size(), 0);
    auto mag_at = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return g.mag[static_cast<std::size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double m = g.mag[i];
            if (m <= 0.0) continue;
            const double ax = std::abs(g.gx[i]), ay = std::abs(g.gy[i]);
            int ux, uy;
            if (ay <= t1 * ax) {
                ux = 1; uy = 0;
            } else if (ay >= t2 * ax) {
                ux = 0; uy = 1;
            } else if (g.gx[i] * g.gy[i] > 0.0) {
                ux = 1; uy = 1;
            } else {
                ux = 1; uy = -1;
            }
            const double dot = g.gx[i] * ux + g.gy[i] * uy;
            const int s = dot >= 0.0 ? 1 : -1;
            const double fwd = mag_at(y + s * uy, x + s * ux);   // toward higher intensity
            const double bwd = mag_at(y - s * uy, x - s * ux);
            if (m > bwd && m >= fwd) keep[i] = 1;
        }
    }
    return keep;
}

void hysteresis(const Gradients& g, const std::vector<char>& keep, int h, int w,
                double low, double high, scalar* out) {
    std::vector<char> state(keep.size(), 0);  // 1 weak, 2 strong
    std::vector<int> stack;
    for (int i = 0; i < h * w; ++i) {
        if (!keep[static_cast<std::size_t>(i)]) continue;
        const double m = g.mag[static_cast<std::size_t>(i)];
        if (m >= high) {
            state[static_cast<std::size_t>(i)] = 2;
            stack.push_back(i);
        } else if (m >= low) {
            state[static_cast<std::size_t>(i)] = 1;
        }
    }
    std::vector<char> on(keep.size(), 0);
    while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        if (on[static_cast<std::size_t>(i)]) continue;
        on[static_cast<std::size_t>(i)] = 1;
        const int y = i / w, x = i % w;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (dy == 0 && dx == 0) continue;
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const int j = ny * w + nx;
                if (state[static_cast<std::size_t>(j)] >= 1 && !on[static_cast<std::size_t>(j)])
                    stack.push_back(j);
            }
        }
    }
    for (std::size_t i = 0; i < on.size(); ++i) out[i] = on[i] ? scalar(1) : scalar(0);
}

}  // namespace

Tensor canny_boundary(const Tensor& mask, scalar low, scalar high) {
    const Shape ms = mask.shape;
    if (ms.c != 1)
        throw std::runtime_error("canny_boundary: expected single-channel mask, got " + ms.str());
    if (!(low >= 0 && high >= low && high <= 1))
        throw std::runtime_error("canny_boundary: thresholds must satisfy 0 <= low <= high <= 1");
    for (index_t i = 0; i < mask.numel(); ++i)
        if (mask.ptr()[i] != scalar(0) && mask.ptr()[i] != scalar(1))
            throw std::runtime_error("canny_boundary: mask must be binary (0/1)");
    Tensor out({ms.n, 1, ms.h, ms.w});
    std::vector<double> blurred;
    for (int n = 0; n < ms.n; ++n) {
        const scalar* src = mask.ptr() + static_cast<index_t>(n) * ms.h * ms.w;
        scalar* dst = out.mut() + static_cast<index_t>(n) * ms.h * ms.w;
        gauss5(src, ms.h, ms.w, blurred);
        const Gradients g = sobel(blurred, ms.h, ms.w);
        if (g.max_mag <= 0.0) continue;  // constant mask, no edges
        const std::vector<char> keep = nms(g, ms.h, ms.w);
        hysteresis(g, keep, ms.h, ms.w,
                   static_cast<double>(low) * g.max_mag,
                   static_cast<double>(high) * g.max_mag, dst);
    }
    return out;
}

Tensor dilate(const Tensor& bmap, int radius) {
    const Shape s = bmap.shape;
    if (radius < 0) throw std::runtime_error("dilate: radius must be >= 0");
    Tensor out(s);
    const scalar* src = bmap.ptr();
    scalar* dst = out.mut();
    const index_t plane = static_cast<index_t>(s.h) * s.w;
    for (index_t img = 0; img < static_cast<index_t>(s.n) * s.c; ++img) {
        const scalar* sp = src + img * plane;
        scalar* dp = dst + img * plane;
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                scalar v = 0;
                for (int dy = -radius; dy <= radius && v == scalar(0); ++dy) {
                    const int ny = y + dy;
                    if (ny < 0 || ny >= s.h) continue;
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int nx = x + dx;
                        if (nx < 0 || nx >= s.w) continue;
                        if (sp[static_cast<index_t>(ny) * s.w + nx] > scalar(0.5)) {
                            v = 1;
                            break;
                        }
                    }
                }
                dp[static_cast<index_t>(y) * s.w + x] = v;
            }
        }
    }
    return out;
}

Tensor boundary_target(const Tensor& mask, int lambda) {
    const Shape ms = mask.shape;
    if (lambda < 1 || ms.h % lambda != 0 || ms.w % lambda != 0)
        throw std::runtime_error("boundary_target: lambda " + std::to_string(lambda) +
                                 " must divide mask dims " + ms.str());
    Tensor edges = dilate(canny_boundary(mask), 1);
    Tensor small = bilinear_resize(edges, ms.h / lambda, ms.w / lambda);
    scalar* d = small.mut();
    for (index_t i = 0; i < small.numel(); ++i) d[i] = d[i] >= scalar(0.5) ? scalar(1) : scalar(0);
    return small;
}

}  // namespace fbwc
