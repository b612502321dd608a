#include "fbwc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fbwc/ops.hpp"

namespace fbwc {

namespace {

void check_pair(const Tensor& logits, const Tensor& target, const char* what) {
    if (!(logits.shape == target.shape))
        throw std::runtime_error(std::string(what) + ": logits " + logits.shape.str() +
                                 " and target " + target.shape.str() + " differ");
    if (target.tracked())
        throw std::runtime_error(std::string(what) + ": target must not require gradients");
}

double stable_sigmoid_d(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

Tensor bce_logits(const Tensor& logits, const Tensor& target) {
    check_pair(logits, target, "bce_logits");
    Tensor per_pixel = sub(softplus(logits), mul(logits, target));
    return scale(sum_all(per_pixel), scalar(1.0 / static_cast<double>(logits.numel())));
}

Tensor ohem_ce(const Tensor& logits, const Tensor& target, scalar keep_thresh, index_t min_kept) {
    check_pair(logits, target, "ohem_ce");
    const Shape s = logits.shape;
    if (s.c != 1)
        throw std::runtime_error("ohem_ce: expected single-channel logits, got " + s.str());
    const index_t plane = s.h * s.w;
    index_t kept_floor = min_kept;
    if (kept_floor == 0) kept_floor = (plane + 15) / 16;  // ceil(H*W/16)
    if (kept_floor < 1) throw std::runtime_error("ohem_ce: min_kept must be >= 1");
    kept_floor = std::min(kept_floor, plane);

    // Per-image pixel weights: 1/(batch * kept_in_image) on kept pixels.
    Tensor weights = Tensor::zeros(s);
    for (index_t n = 0; n < s.n; ++n) {
        const scalar* z = logits.ptr() + n * plane;
        const scalar* t = target.ptr() + n * plane;
        std::vector<double> p_true(static_cast<std::size_t>(plane));
        std::vector<index_t> kept;
        for (index_t i = 0; i < plane; ++i) {
            const double p = stable_sigmoid_d(z[i]);
            p_true[static_cast<std::size_t>(i)] = t[i] >= scalar(0.5) ? p : 1.0 - p;
            if (p_true[static_cast<std::size_t>(i)] < static_cast<double>(keep_thresh))
                kept.push_back(i);
        }
        if (static_cast<index_t>(kept.size()) < kept_floor) {
            // Too few hard pixels: fall back to the hardest min_kept overall,
            // with index order as the deterministic tiebreak.
            std::vector<index_t> order(static_cast<std::size_t>(plane));
            std::iota(order.begin(), order.end(), index_t(0));
            std::stable_sort(order.begin(), order.end(), [&](index_t a, index_t b) {
                return p_true[static_cast<std::size_t>(a)] < p_true[static_cast<std::size_t>(b)];
            });
            kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kept_floor));
        }
        const scalar w =
            static_cast<scalar>(1.0 / (static_cast<double>(s.n) * static_cast<double>(kept.size())));
        for (index_t i : kept) weights.mut()[n * plane + i] = w;
    }

    Tensor per_pixel = sub(softplus(logits), mul(logits, target));
    return sum_all(mul(per_pixel, weights));
}

LossBreakdown total_loss(scalar l_seg, scalar l_am, std::vector<scalar> bc_losses, bool am_off,
                         bool bc_off) {
    if (bc_losses.empty()) throw std::runtime_error("total_loss: need at least one boundary loss");
    LossBreakdown out;
    out.l_seg = l_seg;
    out.l_am = am_off ? scalar(0) : l_am;
    if (bc_off) std::fill(bc_losses.begin(), bc_losses.end(), scalar(0));
    out.bc_losses = std::move(bc_losses);
    double bc_mean = 0;
    for (scalar b : out.bc_losses) bc_mean += static_cast<double>(b);
    bc_mean /= static_cast<double>(out.bc_losses.size());
    out.total = static_cast<scalar>(static_cast<double>(out.l_seg) +
                                    static_cast<double>(out.l_am) + bc_mean);
    return out;
}

MetricsRecord metrics(const Tensor& pred_probs, const Tensor& gt, scalar threshold) {
    if (!(pred_probs.shape == gt.shape))
        throw std::runtime_error("metrics: prediction " + pred_probs.shape.str() + " and mask " +
                                 gt.shape.str() + " differ");
    for (index_t i = 0; i < gt.numel(); ++i)
        if (gt.ptr()[i] != scalar(0) && gt.ptr()[i] != scalar(1))
            throw std::runtime_error("metrics: ground truth must be binary");

    long long tp = 0, fp = 0, tn = 0, fn = 0;
    double abs_err = 0;
    for (index_t i = 0; i < gt.numel(); ++i) {
        const bool p = pred_probs.ptr()[i] >= threshold;
        const bool g = gt.ptr()[i] != scalar(0);
        tp += p && g;
        fp += p && !g;
        tn += !p && !g;
        fn += !p && g;
        abs_err += std::abs(static_cast<double>(pred_probs.ptr()[i]) - static_cast<double>(gt.ptr()[i]));
    }
    const long long np = tp + fn, nn = tn + fp;
    MetricsRecord r;
    r.mae = abs_err / static_cast<double>(gt.numel());
    const long long inter = tp, uni = tp + fp + fn;
    r.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    const double acc_p = np > 0 ? static_cast<double>(tp) / static_cast<double>(np)
                                : (fp == 0 ? 1.0 : 0.0);
    const double acc_n = nn > 0 ? static_cast<double>(tn) / static_cast<double>(nn)
                                : (fn == 0 ? 1.0 : 0.0);
    r.ber = 100.0 * (1.0 - 0.5 * (acc_p + acc_n));
    return r;
}

}  // namespace fbwc
