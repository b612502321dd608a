#pragma once

#include <complex>
#include <vector>

#include "fbwc/tensor.hpp"

namespace fbwc {

// Dense complex h x w grid used by the frequency-domain routines.
struct ComplexGrid {
    int h = 0, w = 0;
    std::vector<double> re, im;

    ComplexGrid() = default;
    ComplexGrid(int h_, int w_)
        : h(h_), w(w_),
          re(static_cast<std::size_t>(h_) * w_, 0.0),
          im(static_cast<std::size_t>(h_) * w_, 0.0) {}

    std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * w + x; }
};

// In-place iterative radix-2 transform: bit-reversal reordering followed by
// log2(N) butterfly stages. N must be a power of two (N = 1 is the identity).
void fft1_radix2(std::vector<std::complex<double>>& v);

// Row-column 2D transform of a real plane. h and w must be powers of two.
ComplexGrid fft2(const std::vector<double>& plane, int h, int w);

// Direct double-sum DFT of a real plane, any size. O((h*w)^2); oracle use.
ComplexGrid dft2_reference(const std::vector<double>& plane, int h, int w);

// sum |x|^2 over the plane and (1/(h*w)) * sum |F|^2 over a grid, for energy
// conservation checks.
double energy_spatial(const std::vector<double>& plane);
double energy_spectral(const ComplexGrid& g);

// Per-(n,c) plane: real part of the 2D FFT, where each plane is zero-padded
// up to the next power of two and the result is cropped back to h x w.
// Linear, so the backward pass is the same map applied to the upstream
// gradient (the real-part DFT matrix is symmetric).
Tensor real_fft_map(const Tensor& x);

// Frequency enhancement of a feature map: 1x1 projection plus the real FFT
// plane scaled by 1/(h*w). proj_kernel is (c,c,1,1), proj_bias (1,c,1,1).
Tensor fourier_enhance(const Tensor& x, const Tensor& proj_kernel, const Tensor& proj_bias);

}  // namespace fbwc
