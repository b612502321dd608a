#pragma once

#include <vector>

#include "fbwc/tensor.hpp"

namespace fbwc {

// Mean binary cross-entropy from logits, in the stable softplus(z) - z*t
// form. Differentiable; target is treated as a constant.
Tensor bce_logits(const Tensor& logits, const Tensor& target);

// Online hard-example mining over per-pixel cross-entropy: pixels whose
// predicted probability of the true class is >= keep_thresh are dropped,
// unless fewer than min_kept would remain, in which case the min_kept
// hardest pixels are kept. Selection happens per image; the result is the
// mean over kept pixels, averaged across the batch. min_kept == 0 selects
// the automatic floor ceil(H*W/16).
Tensor ohem_ce(const Tensor& logits, const Tensor& target, scalar keep_thresh = scalar(0.7),
               index_t min_kept = 0);

// Scalar loss report: total = l_seg + l_am + mean(bc_losses), with ablation
// flags that zero the attention and boundary terms before composition.
struct LossBreakdown {
    scalar l_seg = 0, l_am = 0;
    std::vector<scalar> bc_losses;
    scalar total = 0;
};
LossBreakdown total_loss(scalar l_seg, scalar l_am, std::vector<scalar> bc_losses,
                         bool am_off = false, bool bc_off = false);

// Per-image segmentation quality. iou/mae in [0,1]; ber in [0,100],
// 100*(1 - (TP/Np + TN/Nn)/2) with empty-class conventions: a missing class
// counts as perfectly classified when nothing was predicted into it.
// MAE uses the raw probabilities; IoU/BER binarize at `threshold`.
struct MetricsRecord {
    double iou = 0, mae = 0, ber = 0;
};
MetricsRecord metrics(const Tensor& pred_probs, const Tensor& gt, scalar threshold = scalar(0.5));

}  // namespace fbwc
