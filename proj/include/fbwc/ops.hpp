#pragma once

#include <functional>

#include "fbwc/tensor.hpp"

namespace fbwc {

enum class Mode { train, eval };

// Running statistics for one batchnorm layer, shape (1,c,1,1) each. The
// tensors usually alias ParamStore buffers so checkpointing sees updates.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    static BatchNormState make(int channels);
};

// 2D cross-correlation (no kernel flip). input (n,ci,h,w), kernel
// (co,ci,kh,kw), bias (1,co,1,1) or (co,1,1,1). Output spatial dims are
// floor((h + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int padding = 0);

// 2x2 max pooling, stride 2. Requires even h and w; gradient routes to the
// first maximum in scan order on ties.
Tensor maxpool2(const Tensor& input);

// Bilinear resize with the half-pixel (align_corners=false) convention:
// src = (dst + 0.5) * in/out - 0.5, clamped to the valid range.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

// Per-channel batch normalization over n*h*w. Train mode normalizes by batch
// statistics (biased variance) and folds them into the running buffers as
// running = (1-momentum)*running + momentum*batch; eval mode uses the stored
// statistics.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode,
                 scalar eps = scalar(1e-5), scalar momentum = scalar(0.1));

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// log(1 + exp(x)) in its overflow-safe form; derivative is sigmoid(x).
Tensor softplus(const Tensor& x);
Tensor scale(const Tensor& x, double k);

// Sum of all elements into a (1,1,1,1) tensor. Accumulates in double.
Tensor sum_all(const Tensor& x);

// Matrix product on (n,1,m,k) x (n,1,k,p) -> (n,1,m,p), batched over n.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two dims: (n,c,h,w) -> (n,c,w,h).
Tensor transpose(const Tensor& a);
// Metadata-only reshape; element count must match.
Tensor reshape(const Tensor& x, Shape s);
// Copies row i of the batch into a (1,c,h,w) tensor.
Tensor slice_n(const Tensor& x, int i);
// n copies of the dim x dim identity matrix, untracked constant.
Tensor eye_batch(int n, int dim);

struct GradcheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
};

// Compares the tape gradient of graph(input) against central finite
// differences, element by element. `graph` must produce a scalar and treat
// the passed tensor as its only variable.
GradcheckReport gradcheck(const std::function<Tensor(Tape&, const Tensor&)>& graph,
                          const Tensor& input, double step = 1e-3,
                          double threshold = 1e-2);

}  // namespace fbwc
