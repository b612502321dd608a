// Edge-map extraction from binary masks: blur/gradient/suppression/hysteresis
// pipeline, morphological dilation, and the downsampled supervision targets.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "fbwc/boundary.hpp"
#include "fbwc/rng.hpp"
#include "test_util.hpp"

using namespace fbwc;

namespace {

Tensor make_mask(int h, int w) { return Tensor::zeros({1, 1, h, w}); }

void fill_rect(Tensor& m, int r0, int r1, int c0, int c1) {
    const int w = static_cast<int>(m.shape.w);
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) m.mut()[static_cast<std::size_t>(r) * w + c] = 1;
}

bool lit(const Tensor& t, int r, int c) { return t.at(0, 0, r, c) > scalar(0.5); }

bool is_binary(const Tensor& t) {
    for (index_t i = 0; i < t.numel(); ++i)
        if (t.ptr()[i] != scalar(0) && t.ptr()[i] != scalar(1)) return false;
    return true;
}

Tensor hflip(const Tensor& t) {
    Tensor out(t.shape);
    const int h = static_cast<int>(t.shape.h), w = static_cast<int>(t.shape.w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out.mut()[static_cast<std::size_t>(r) * w + c] = t.at(0, 0, r, w - 1 - c);
    return out;
}

bool exactly_equal(const Tensor& a, const Tensor& b) {
    if (!(a.shape == b.shape)) return false;
    for (index_t i = 0; i < a.numel(); ++i)
        if (a.ptr()[i] != b.ptr()[i]) return false;
    return true;
}

// Pixels whose 3x3 neighborhood (clamped at the border) is not constant.
Tensor gradient_support(const Tensor& m) {
    const int h = static_cast<int>(m.shape.h), w = static_cast<int>(m.shape.w);
    Tensor out = make_mask(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const scalar center = m.at(0, 0, r, c);
            bool varies = false;
            for (int dr = -1; dr <= 1 && !varies; ++dr)
                for (int dc = -1; dc <= 1 && !varies; ++dc) {
                    const int rr = std::min(std::max(r + dr, 0), h - 1);
                    const int cc = std::min(std::max(c + dc, 0), w - 1);
                    if (m.at(0, 0, rr, cc) != center) varies = true;
                }
            if (varies) out.mut()[static_cast<std::size_t>(r) * w + c] = 1;
        }
    return out;
}

bool subset_of(const Tensor& a, const Tensor& b) {
    for (index_t i = 0; i < a.numel(); ++i)
        if (a.ptr()[i] > scalar(0.5) && b.ptr()[i] < scalar(0.5)) return false;
    return true;
}

Tensor random_blocky_mask(int h, int w, std::mt19937_64& g) {
    Tensor m = make_mask(h, w);
    const int rects = rng_int(g, 1, 3);
    for (int i = 0; i < rects; ++i) {
        const int r0 = rng_int(g, 0, h - 2), c0 = rng_int(g, 0, w - 2);
        const int r1 = rng_int(g, r0 + 1, h), c1 = rng_int(g, c0 + 1, w);
        fill_rect(m, r0, r1, c0, c1);
    }
    return m;
}

}  // namespace

TEST_CASE("constant masks produce no boundary") {
    Tensor zeros = make_mask(16, 16);
    Tensor bz = canny_boundary(zeros, 0.1, 0.3);
    CHECK(is_binary(bz));
    for (index_t i = 0; i < bz.numel(); ++i) CHECK(bz.ptr()[i] == scalar(0));

    // Replicate border padding means an all-glass mask has zero gradient
    // everywhere, including at the image frame.
    Tensor ones = Tensor::ones({1, 1, 16, 16});
    Tensor bo = canny_boundary(ones, 0.1, 0.3);
    for (index_t i = 0; i < bo.numel(); ++i) CHECK(bo.ptr()[i] == scalar(0));
}

TEST_CASE("bad inputs are rejected") {
    Tensor m = make_mask(8, 8);
    m.mut()[3] = scalar(0.5);
    CHECK_THROWS_AS(canny_boundary(m, 0.1, 0.3), std::runtime_error);
    Tensor ok = make_mask(8, 8);
    CHECK_THROWS_AS(canny_boundary(ok, 0.4, 0.2), std::runtime_error);
    CHECK_THROWS_AS(canny_boundary(ok, -0.1, 0.3), std::runtime_error);
    CHECK_THROWS_AS(canny_boundary(ok, 0.1, 1.5), std::runtime_error);
    CHECK_THROWS_AS(canny_boundary(Tensor::zeros({1, 2, 8, 8}), 0.1, 0.3), std::runtime_error);
    CHECK_THROWS_AS(dilate(ok, -1), std::runtime_error);
}

TEST_CASE("a full-height step keeps exactly one column") {
    // Pure one-dimensional step: the gradient peak is a two-column tie, and
    // suppression must resolve it to a single column (the darker side) for
    // every row, with no breaks from the replicated border.
    Tensor m = make_mask(12, 12);
    fill_rect(m, 0, 12, 6, 12);
    Tensor b = canny_boundary(m, 0.1, 0.3);
    CHECK(is_binary(b));
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c) CHECK(lit(b, r, c) == (c == 5));
}

TEST_CASE("a centered square yields a closed one-pixel ring at its perimeter") {
    Tensor m = make_mask(16, 16);
    fill_rect(m, 4, 12, 4, 12);
    Tensor b = canny_boundary(m, 0.1, 0.3);
    CHECK(is_binary(b));

    int count = 0;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            if (!lit(b, r, c)) continue;
            ++count;
            // Support stays in the two-pixel band around the ideal edge.
            CHECK(r >= 3);
            CHECK(r <= 12);
            CHECK(c >= 3);
            CHECK(c <= 12);
            CHECK_FALSE((r >= 5 && r <= 10 && c >= 5 && c <= 10));  // deep interior clear
            // Closed curve: every edge pixel continues in two directions.
            int neighbors = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < 16 && cc >= 0 && cc < 16 && lit(b, rr, cc)) ++neighbors;
                }
            CHECK(neighbors >= 2);
        }
    CHECK(count >= 24);  // at least the perimeter's worth of pixels

    // One pixel wide: no fully-lit 2x2 block anywhere.
    for (int r = 0; r + 1 < 16; ++r)
        for (int c = 0; c + 1 < 16; ++c) {
            const bool full_block =
                lit(b, r, c) && lit(b, r, c + 1) && lit(b, r + 1, c) && lit(b, r + 1, c + 1);
            CHECK_FALSE(full_block);
        }

    // Encirclement: every mask row/column is crossed on both sides.
    for (int r = 4; r < 12; ++r) {
        int in_row = 0;
        for (int c = 0; c < 16; ++c) in_row += lit(b, r, c);
        CHECK(in_row >= 2);
    }
    for (int c = 4; c < 12; ++c) {
        int in_col = 0;
        for (int r = 0; r < 16; ++r) in_col += lit(b, r, c);
        CHECK(in_col >= 2);
    }

    // The problem is mirror-symmetric, so the ring must be too.
    CHECK(exactly_equal(b, hflip(b)));
}

TEST_CASE("boundary stays within the dilated gradient support") {
    std::mt19937_64 g(201);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor m = random_blocky_mask(16, 16, g);
        Tensor b = canny_boundary(m, 0.1, 0.3);
        CHECK(is_binary(b));
        CHECK(subset_of(b, dilate(gradient_support(m), 2)));
    }
}

TEST_CASE("horizontal flip commutes with boundary extraction") {
    std::mt19937_64 g(202);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor m = trial % 2 == 0 ? random_blocky_mask(16, 16, g)
                                  : test_util::rand_mask({1, 1, 16, 16}, g, 0.5);
        Tensor lhs = canny_boundary(hflip(m), 0.1, 0.3);
        Tensor rhs = hflip(canny_boundary(m, 0.1, 0.3));
        CHECK(exactly_equal(lhs, rhs));
    }
}

TEST_CASE("dilation: identity, block growth, and composition") {
    SUBCASE("radius zero is the identity") {
        std::mt19937_64 g(203);
        Tensor b = test_util::rand_mask({1, 1, 9, 9}, g, 0.3);
        CHECK(exactly_equal(dilate(b, 0), b));
    }
    SUBCASE("a single pixel grows into a square block") {
        Tensor b = make_mask(7, 7);
        b.mut()[3 * 7 + 3] = 1;
        Tensor d = dilate(b, 1);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 7; ++c)
                CHECK(lit(d, r, c) == (std::abs(r - 3) <= 1 && std::abs(c - 3) <= 1));
    }
    SUBCASE("a ring thickens to three pixels, matching the set-union oracle") {
        Tensor b = make_mask(12, 12);
        for (int i = 3; i <= 8; ++i) {
            b.mut()[static_cast<std::size_t>(3) * 12 + i] = 1;
            b.mut()[static_cast<std::size_t>(8) * 12 + i] = 1;
            b.mut()[static_cast<std::size_t>(i) * 12 + 3] = 1;
            b.mut()[static_cast<std::size_t>(i) * 12 + 8] = 1;
        }
        Tensor d = dilate(b, 1);
        Tensor want = make_mask(12, 12);
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 12; ++c) {
                if (!lit(b, r, c)) continue;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr >= 0 && rr < 12 && cc >= 0 && cc < 12)
                            want.mut()[static_cast<std::size_t>(rr) * 12 + cc] = 1;
                    }
            }
        CHECK(exactly_equal(d, want));
    }
    SUBCASE("two radius-1 passes equal one radius-2 pass") {
        std::mt19937_64 g(204);
        for (int trial = 0; trial < 10; ++trial) {
            Tensor b = test_util::rand_mask({1, 1, 10, 10}, g, 0.15);
            CHECK(exactly_equal(dilate(dilate(b, 1), 1), dilate(b, 2)));
        }
    }
}

TEST_CASE("supervision targets: downsampled, binary, and centered on the edge") {
    SUBCASE("empty mask gives an empty target") {
        Tensor m = make_mask(32, 32);
        Tensor t = boundary_target(m, 4);
        CHECK(t.shape == Shape{1, 1, 8, 8});
        for (index_t i = 0; i < t.numel(); ++i) CHECK(t.ptr()[i] == scalar(0));
    }
    SUBCASE("centered square gives a closed low-resolution ring") {
        Tensor m = make_mask(32, 32);
        fill_rect(m, 8, 24, 8, 24);
        Tensor t = boundary_target(m, 4);
        CHECK(t.shape == Shape{1, 1, 8, 8});
        CHECK(is_binary(t));
        int count = 0;
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                if (!lit(t, r, c)) continue;
                ++count;
                CHECK(r >= 1);
                CHECK(r <= 6);
                CHECK(c >= 1);
                CHECK(c <= 6);
                CHECK_FALSE((r >= 3 && r <= 4 && c >= 3 && c <= 4));  // center stays clear
            }
        CHECK(count >= 8);
        for (int r = 1; r <= 6; ++r) {
            int in_row = 0;
            for (int c = 0; c < 8; ++c) in_row += lit(t, r, c);
            CHECK(in_row >= 1);
        }
    }
    SUBCASE("dimensions must divide by the downsample factor") {
        Tensor m = make_mask(10, 10);
        CHECK_THROWS_AS(boundary_target(m, 4), std::runtime_error);
    }
}
