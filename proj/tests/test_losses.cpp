// Cross-entropy losses (plain and hard-example-mined), the loss report
// composition, and segmentation quality metrics.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "fbwc/data.hpp"
#include "fbwc/losses.hpp"
#include "fbwc/ops.hpp"
#include "fbwc/rng.hpp"
#include "test_util.hpp"

using namespace fbwc;
using test_util::rand_mask;
using test_util::rand_tensor;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Fills (logits, target) so each pixel's probability of its true class is
// exactly p_true[i], alternating true classes.
void fill_from_p_true(Tensor& z, Tensor& t, const std::vector<double>& p_true) {
    for (std::size_t i = 0; i < p_true.size(); ++i) {
        const bool positive = i % 2 == 0;
        t.mut()[static_cast<index_t>(i)] = positive ? scalar(1) : scalar(0);
        const double raw = logit(p_true[i]);
        z.mut()[static_cast<index_t>(i)] = static_cast<scalar>(positive ? raw : -raw);
    }
}

}  // namespace

TEST_CASE("cross-entropy from logits: hand values and the f64 oracle") {
    SUBCASE("zero logits cost ln 2 for hard and soft targets") {
        Tensor z = Tensor::zeros({1, 1, 2, 2});
        for (scalar tv : {scalar(0), scalar(1), scalar(0.5)}) {
            Tensor t = Tensor::full({1, 1, 2, 2}, tv);
            Tensor loss = bce_logits(z, t);
            CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
        }
    }
    SUBCASE("confident correct logits cost nearly nothing") {
        Tensor z({1, 1, 2, 2});
        Tensor t({1, 1, 2, 2});
        const scalar zs[4] = {scalar(20), scalar(-20), scalar(20), scalar(-20)};
        const scalar ts[4] = {1, 0, 1, 0};
        for (int i = 0; i < 4; ++i) {
            z.mut()[i] = zs[i];
            t.mut()[i] = ts[i];
        }
        CHECK(bce_logits(z, t).item() <= scalar(1e-8));
    }
    SUBCASE("random batch matches the direct formula evaluated in f64") {
        std::mt19937_64 g(401);
        Tensor z = rand_tensor({1, 1, 8, 8}, g, -4.0, 4.0);
        Tensor t = rand_mask({1, 1, 8, 8}, g, 0.5);
        double want = 0;
        for (index_t i = 0; i < z.numel(); ++i) {
            const double zi = z.ptr()[i], ti = t.ptr()[i];
            const double p = 1.0 / (1.0 + std::exp(-zi));
            want += -(ti * std::log(p) + (1.0 - ti) * std::log(1.0 - p));
        }
        want /= static_cast<double>(z.numel());
        CHECK(bce_logits(z, t).item() == doctest::Approx(want).epsilon(1e-6));
    }
    SUBCASE("extreme logits stay finite") {
        Tensor z({1, 1, 1, 2});
        z.mut()[0] = scalar(80);
        z.mut()[1] = scalar(-80);
        Tensor t({1, 1, 1, 2});
        t.mut()[0] = 0;
        t.mut()[1] = 1;
        const scalar v = bce_logits(z, t).item();
        CHECK(std::isfinite(static_cast<double>(v)));
        CHECK(v == doctest::Approx(80.0).epsilon(1e-6));  // both pixels maximally wrong
    }
    SUBCASE("mismatched shapes and tracked targets are rejected") {
        Tensor z = Tensor::zeros({1, 1, 2, 2});
        CHECK_THROWS_AS(bce_logits(z, Tensor::zeros({1, 1, 2, 3})), std::runtime_error);
        Tape tape;
        Tensor t = Tensor::zeros({1, 1, 2, 2});
        tape.leaf(t);
        CHECK_THROWS_AS(bce_logits(z, t), std::runtime_error);
    }
}

TEST_CASE("hard-example mining keeps exactly the hard pixels") {
    SUBCASE("hand case: two easy pixels are dropped") {
        Tensor z({1, 1, 2, 2}), t({1, 1, 2, 2});
        fill_from_p_true(z, t, {0.9, 0.8, 0.6, 0.4});
        const double want = (-std::log(0.6) - std::log(0.4)) / 2.0;
        CHECK(ohem_ce(z, t, scalar(0.7), 1).item() == doctest::Approx(want).epsilon(1e-6));
    }
    SUBCASE("the floor pulls back the hardest pixels when everything is easy") {
        Tensor z({1, 1, 2, 2}), t({1, 1, 2, 2});
        fill_from_p_true(z, t, {0.9, 0.8, 0.6, 0.4});
        // Threshold 0.3 drops all four; min_kept 2 recovers the two hardest.
        const double want = (-std::log(0.6) - std::log(0.4)) / 2.0;
        CHECK(ohem_ce(z, t, scalar(0.3), 2).item() == doctest::Approx(want).epsilon(1e-6));
    }
    SUBCASE("threshold 1 with a full floor reduces to plain cross-entropy") {
        std::mt19937_64 g(402);
        Tensor z = rand_tensor({2, 1, 4, 4}, g, -3.0, 3.0);
        Tensor t = rand_mask({2, 1, 4, 4}, g, 0.5);
        const scalar plain = bce_logits(z, t).item();
        CHECK(ohem_ce(z, t, scalar(1.0), 16).item() == doctest::Approx(plain).epsilon(1e-6));
        CHECK(ohem_ce(z, t, scalar(1.0), 1).item() == doctest::Approx(plain).epsilon(1e-6));
    }
    SUBCASE("perfect predictions cost nearly nothing under defaults") {
        Tensor z({1, 1, 4, 4}), t({1, 1, 4, 4});
        for (index_t i = 0; i < 16; ++i) {
            const bool pos = i % 3 == 0;
            t.mut()[i] = pos ? scalar(1) : scalar(0);
            z.mut()[i] = pos ? scalar(20) : scalar(-20);
        }
        CHECK(ohem_ce(z, t).item() <= scalar(1e-8));
    }
    SUBCASE("selection happens independently per image") {
        // Image 0: all pixels easy (0.9) except one hard (0.2); image 1: all
        // hard (0.4). Per-image means, then batch mean.
        Tensor z({2, 1, 1, 4}), t({2, 1, 1, 4});
        for (index_t i = 0; i < 8; ++i) t.mut()[i] = 1;
        const double p0[4] = {0.9, 0.9, 0.2, 0.9}, p1[4] = {0.4, 0.4, 0.4, 0.4};
        for (int i = 0; i < 4; ++i) {
            z.mut()[i] = static_cast<scalar>(logit(p0[i]));
            z.mut()[4 + i] = static_cast<scalar>(logit(p1[i]));
        }
        const double want = 0.5 * (-std::log(0.2)) + 0.5 * (-std::log(0.4));
        CHECK(ohem_ce(z, t, scalar(0.7), 1).item() == doctest::Approx(want).epsilon(1e-6));
    }
    SUBCASE("gradients flow only through kept pixels") {
        Tape tape;
        Tensor z({1, 1, 2, 2}), t({1, 1, 2, 2});
        fill_from_p_true(z, t, {0.9, 0.8, 0.6, 0.4});
        tape.leaf(z);
        tape.backward(ohem_ce(z, t, scalar(0.7), 1));
        const std::vector<scalar> gz = tape.grad_or_zeros(z);
        CHECK(gz[0] == scalar(0));
        CHECK(gz[1] == scalar(0));
        CHECK(gz[2] != scalar(0));
        CHECK(gz[3] != scalar(0));
    }
    SUBCASE("the mined loss gradient passes a finite-difference check") {
        // True-class probabilities stay clear of the keep threshold so the
        // selection cannot flip inside the difference step.
        Tensor z({1, 1, 3, 3}), t({1, 1, 3, 3});
        fill_from_p_true(z, t, {0.3, 0.5, 0.85, 0.4, 0.9, 0.55, 0.35, 0.8, 0.45});
        auto f = [&](Tape&, const Tensor& v) { return ohem_ce(v, t, scalar(0.7), 1); };
        CHECK(gradcheck(f, z, 1e-3).pass);
    }
    SUBCASE("plain cross-entropy gradient passes a finite-difference check") {
        std::mt19937_64 g(403);
        Tensor z = rand_tensor({1, 1, 4, 4}, g, -2.0, 2.0);
        Tensor t = rand_mask({1, 1, 4, 4}, g, 0.5);
        auto f = [&](Tape&, const Tensor& v) { return bce_logits(v, t); };
        CHECK(gradcheck(f, z, 1e-3).pass);
    }
}

TEST_CASE("loss report composes the three terms") {
    SUBCASE("zeros stay zero") {
        LossBreakdown lb = total_loss(0, 0, {0, 0, 0, 0});
        CHECK(lb.total == scalar(0));
    }
    SUBCASE("boundary losses enter as their mean") {
        LossBreakdown lb = total_loss(1, 1, {1, 2, 3, 4});
        CHECK(lb.total == doctest::Approx(4.5).epsilon(1e-6));
        REQUIRE(lb.bc_losses.size() == 4);
    }
    SUBCASE("ablation flags zero exactly their own term") {
        LossBreakdown no_bc = total_loss(1, 1, {1, 2, 3, 4}, false, true);
        CHECK(no_bc.total == doctest::Approx(2.0).epsilon(1e-6));
        for (scalar b : no_bc.bc_losses) CHECK(b == scalar(0));
        CHECK(no_bc.l_am == scalar(1));

        LossBreakdown no_am = total_loss(1, 1, {1, 2, 3, 4}, true, false);
        CHECK(no_am.total == doctest::Approx(3.5).epsilon(1e-6));
        CHECK(no_am.l_am == scalar(0));
    }
    SUBCASE("the stored fields always add up to the total") {
        std::mt19937_64 g(404);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<scalar> bc(static_cast<std::size_t>(rng_int(g, 1, 5)));
            for (scalar& b : bc) b = static_cast<scalar>(rng_range(g, 0.0, 3.0));
            const scalar ls = static_cast<scalar>(rng_range(g, 0.0, 3.0));
            const scalar la = static_cast<scalar>(rng_range(g, 0.0, 3.0));
            LossBreakdown lb = total_loss(ls, la, bc, rng_bernoulli(g, 0.3), rng_bernoulli(g, 0.3));
            double mean_bc = 0;
            for (scalar b : lb.bc_losses) mean_bc += b;
            mean_bc /= static_cast<double>(lb.bc_losses.size());
            CHECK(std::abs(static_cast<double>(lb.total) -
                           (lb.l_seg + lb.l_am + mean_bc)) <= 1e-6);
        }
    }
    SUBCASE("an empty boundary list is rejected") {
        CHECK_THROWS_AS(total_loss(1, 1, {}), std::runtime_error);
    }
}

TEST_CASE("metrics: exact counts on hand-built masks") {
    SUBCASE("perfect hard prediction") {
        std::mt19937_64 g(405);
        Tensor gt = rand_mask({1, 1, 4, 4}, g, 0.5);
        MetricsRecord r = metrics(gt, gt);
        CHECK(r.iou == doctest::Approx(1.0));
        CHECK(r.mae == doctest::Approx(0.0));
        CHECK(r.ber == doctest::Approx(0.0));
    }
    SUBCASE("predicting glass everywhere on a half-glass image") {
        Tensor gt = Tensor::zeros({1, 1, 4, 4});
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 2; ++c) gt.mut()[static_cast<index_t>(r) * 4 + c] = 1;
        Tensor pred = Tensor::ones({1, 1, 4, 4});
        MetricsRecord m = metrics(pred, gt);
        CHECK(m.ber == doctest::Approx(50.0));
        CHECK(m.iou == doctest::Approx(0.5));
        CHECK(m.mae == doctest::Approx(0.5));
    }
    SUBCASE("a 4x4 case with TP=4, FP=2, FN=2") {
        Tensor gt = Tensor::zeros({1, 1, 4, 4});
        for (index_t i = 0; i < 6; ++i) gt.mut()[i] = 1;  // positives at 0..5
        Tensor pred({1, 1, 4, 4});
        for (index_t i = 0; i < 16; ++i) {
            const bool on = i < 4 || i == 6 || i == 7;  // overlap 0..3, extra 6,7
            pred.mut()[i] = on ? scalar(0.9) : scalar(0.1);
        }
        MetricsRecord m = metrics(pred, gt);
        CHECK(m.iou == doctest::Approx(0.5).epsilon(1e-9));                    // 4 / (4+2+2)
        CHECK(m.ber == doctest::Approx(100.0 * (1 - 0.5 * (4.0 / 6 + 8.0 / 10))).epsilon(1e-9));
        CHECK(m.mae == doctest::Approx(4.8 / 16).epsilon(1e-6));
    }
    SUBCASE("empty-class conventions") {
        Tensor empty = Tensor::zeros({1, 1, 2, 2});
        Tensor low = Tensor::full({1, 1, 2, 2}, scalar(0.1));
        MetricsRecord both_empty = metrics(low, empty);
        CHECK(both_empty.iou == doctest::Approx(1.0));  // nothing to find, nothing found
        CHECK(both_empty.ber == doctest::Approx(0.0));

        Tensor full = Tensor::ones({1, 1, 2, 2});
        MetricsRecord miss_all = metrics(low, full);  // no negatives; everything missed
        CHECK(miss_all.iou == doctest::Approx(0.0));
        CHECK(miss_all.ber == doctest::Approx(100.0));

        // No positives exist but some were predicted: the vacuous positive
        // term scores 0, and every negative is wrong too.
        MetricsRecord hallucinate = metrics(full, empty);
        CHECK(hallucinate.iou == doctest::Approx(0.0));
        CHECK(hallucinate.ber == doctest::Approx(100.0));
    }
    SUBCASE("invalid inputs are rejected") {
        Tensor p = Tensor::zeros({1, 1, 2, 2});
        CHECK_THROWS_AS(metrics(p, Tensor::zeros({1, 1, 2, 3})), std::runtime_error);
        Tensor soft = Tensor::full({1, 1, 2, 2}, scalar(0.4));
        CHECK_THROWS_AS(metrics(p, soft), std::runtime_error);
    }
}

TEST_CASE("metric symmetries") {
    std::mt19937_64 g(406);
    SUBCASE("flipping prediction and mask together changes nothing") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor pred = rand_tensor({1, 1, 6, 6}, g, 0.0, 1.0);
            Tensor gt = rand_mask({1, 1, 6, 6}, g, 0.5);
            MetricsRecord a = metrics(pred, gt);
            MetricsRecord b = metrics(hflip_image(pred), hflip_image(gt));
            CHECK(a.iou == doctest::Approx(b.iou).epsilon(1e-12));
            CHECK(a.ber == doctest::Approx(b.ber).epsilon(1e-12));
            CHECK(a.mae == doctest::Approx(b.mae).epsilon(1e-12));
        }
    }
    SUBCASE("absolute error is complement-invariant") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor pred = rand_tensor({1, 1, 5, 7}, g, 0.0, 1.0);
            Tensor gt = rand_mask({1, 1, 5, 7}, g, 0.5);
            Tensor ip(pred.shape), ig(gt.shape);
            for (index_t i = 0; i < pred.numel(); ++i) {
                ip.mut()[i] = scalar(1) - pred.ptr()[i];
                ig.mut()[i] = scalar(1) - gt.ptr()[i];
            }
            // Equal up to f32 rounding: 1-p is not exactly representable for
            // every p, so the complement image carries one rounding step.
            CHECK(metrics(pred, gt).mae == doctest::Approx(metrics(ip, ig).mae).epsilon(1e-6));
        }
    }
}
