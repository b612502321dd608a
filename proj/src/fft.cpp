#include "fbwc/fft.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "fbwc/ops.hpp"

namespace fbwc {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }
}  // namespace

void fft1_radix2(std::vector<std::complex<double>>& v) {
    const int n = static_cast<int>(v.size());
    if (!pow2(n))
        throw std::runtime_error("fft1_radix2: length " + std::to_string(n) + " is not a power of two");
    // Bit-reversal reordering puts each element where its index, read with
    // reversed bits, says it belongs.
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
    // log2(n) butterfly stages, doubling the sub-transform length each time.
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / len;
        const std::complex<double> wstep(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                const std::complex<double> a = v[static_cast<std::size_t>(i + k)];
                const std::complex<double> b = v[static_cast<std::size_t>(i + k + len / 2)] * w;
                v[static_cast<std::size_t>(i + k)] = a + b;
                v[static_cast<std::size_t>(i + k + len / 2)] = a - b;
                w *= wstep;
            }
        }
    }
}

ComplexGrid fft2(const std::vector<double>& plane, int h, int w) {
    if (!pow2(h) || !pow2(w))
        throw std::runtime_error("fft2: dims " + std::to_string(h) + "x" + std::to_string(w) +
                                 " must be powers of two");
    if (static_cast<int>(plane.size()) != h * w)
        throw std::runtime_error("fft2: plane size does not match dims");
    ComplexGrid g(h, w);
    std::vector<std::complex<double>> line;
    line.resize(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            line[static_cast<std::size_t>(x)] = {plane[g.idx(y, x)], 0.0};
        fft1_radix2(line);
        for (int x = 0; x < w; ++x) {
            g.re[g.idx(y, x)] = line[static_cast<std::size_t>(x)].real();
            g.im[g.idx(y, x)] = line[static_cast<std::size_t>(x)].imag();
        }
    }
    line.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y)
            line[static_cast<std::size_t>(y)] = {g.re[g.idx(y, x)], g.im[g.idx(y, x)]};
        fft1_radix2(line);
        for (int y = 0; y < h; ++y) {
            g.re[g.idx(y, x)] = line[static_cast<std::size_t>(y)].real();
            g.im[g.idx(y, x)] = line[static_cast<std::size_t>(y)].imag();
        }
    }
    return g;
}

ComplexGrid dft2_reference(const std::vector<double>& plane, int h, int w) {
    if (static_cast<int>(plane.size()) != h * w)
        throw std::runtime_error("dft2_reference: plane size does not match dims");
    ComplexGrid g(h, w);
    for (int c = 0; c < h; ++c) {
        for (int d = 0; d < w; ++d) {
            double re = 0.0, im = 0.0;
            for (int u = 0; u < h; ++u) {
                for (int v = 0; v < w; ++v) {
                    const double ang = -2.0 * kPi * (static_cast<double>(c) * u / h +
                                                     static_cast<double>(d) * v / w);
                    const double x = plane[static_cast<std::size_t>(u) * w + v];
                    re += x * std::cos(ang);
                    im += x * std::sin(ang);
                }
            }
            g.re[g.idx(c, d)] = re;
            g.im[g.idx(c, d)] = im;
        }
    }
    return g;
}

double energy_spatial(const std::vector<double>& plane) {
    double acc = 0.0;
    for (double v : plane) acc += v * v;
    return acc;
}

double energy_spectral(const ComplexGrid& g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.re.size(); ++i)
        acc += g.re[i] * g.re[i] + g.im[i] * g.im[i];
    return acc / (static_cast<double>(g.h) * g.w);
}

namespace {

// Shared by forward and backward: real part of the padded FFT, cropped.
void real_fft_plane(const scalar* src, int h, int w, scalar* dst) {
    const int ph = static_cast<int>(std::bit_ceil(static_cast<unsigned>(h)));
    const int pw = static_cast<int>(std::bit_ceil(static_cast<unsigned>(w)));
    std::vector<double> buf(static_cast<std::size_t>(ph) * pw, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            buf[static_cast<std::size_t>(y) * pw + x] = static_cast<double>(src[static_cast<index_t>(y) * w + x]);
    const ComplexGrid g = fft2(buf, ph, pw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            dst[static_cast<index_t>(y) * w + x] = static_cast<scalar>(g.re[g.idx(y, x)]);
}

}  // namespace

Tensor real_fft_map(const Tensor& x) {
    const Shape xs = x.shape;
    Tensor out(xs);
    {
        const scalar* xd = x.ptr();
        scalar* od = out.mut();
        const index_t plane = static_cast<index_t>(xs.h) * xs.w;
        for (index_t img = 0; img < static_cast<index_t>(xs.n) * xs.c; ++img)
            real_fft_plane(xd + img * plane, xs.h, xs.w, od + img * plane);
    }
    if (!x.tracked()) return out;
    Tape* tape = x.tape;
    const int xi = x.node;
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            const index_t plane = static_cast<index_t>(xs.h) * xs.w;
            std::vector<scalar> tmp(static_cast<std::size_t>(plane));
            for (index_t img = 0; img < static_cast<index_t>(xs.n) * xs.c; ++img) {
                real_fft_plane(go.data() + img * plane, xs.h, xs.w, tmp.data());
                scalar* dst = gx.data() + img * plane;
                for (index_t i = 0; i < plane; ++i) dst[i] += tmp[static_cast<std::size_t>(i)];
            }
        });
}

Tensor fourier_enhance(const Tensor& x, const Tensor& proj_kernel, const Tensor& proj_bias) {
    const Shape ks = proj_kernel.shape;
    if (ks.h != 1 || ks.w != 1 || ks.n != x.shape.c || ks.c != x.shape.c)
        throw std::runtime_error("fourier_enhance: projection kernel must be (c,c,1,1) for input " +
                                 x.shape.str() + ", got " + ks.str());
    Tensor projected = conv2d(x, proj_kernel, proj_bias, 1, 0);
    Tensor freq = real_fft_map(x);
    const double norm = 1.0 / (static_cast<double>(x.shape.h) * x.shape.w);
    return add(projected, scale(freq, norm));
}

}  // namespace fbwc
