#pragma once

#include "fbwc/tensor.hpp"

namespace fbwc {

// Edge map of a binary mask: 5x5 Gaussian blur (sigma 1.4, replicate
// border), Sobel gradients, four-direction non-maximum suppression, then
// hysteresis with thresholds given as fractions of the maximum gradient
// magnitude. Input and output are (n,1,h,w) with values in {0,1}; batched
// inputs are processed plane by plane. Not differentiable (target maker).
Tensor canny_boundary(const Tensor& mask, scalar low = scalar(0.1), scalar high = scalar(0.3));

// Binary dilation with a square structuring element of the given radius.
Tensor dilate(const Tensor& bmap, int radius);

// Supervision target for the boundary heads: Canny at full resolution,
// dilated by radius 1, bilinearly downsampled by `lambda`, re-binarized
// at 0.5.
Tensor boundary_target(const Tensor& mask, int lambda);

}  // namespace fbwc
