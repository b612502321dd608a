// Image containers, the synthetic glass-scene generator, dataset manifests,
// and training augmentation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fbwc/boundary.hpp"
#include "fbwc/data.hpp"
#include "fbwc/image_io.hpp"
#include "fbwc/rng.hpp"
#include "test_util.hpp"

using namespace fbwc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fbwc_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!(a.shape == b.shape)) return false;
    for (index_t i = 0; i < a.numel(); ++i)
        if (a.ptr()[i] != b.ptr()[i]) return false;
    return true;
}

scalar quantized(scalar v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<scalar>(static_cast<int>(c * 255.0 + 0.5) / 255.0);
}

double glass_fraction(const Tensor& mask) {
    double f = 0;
    for (index_t i = 0; i < mask.numel(); ++i) f += mask.ptr()[i];
    return f / static_cast<double>(mask.numel());
}

double mask_correlation(const SceneSample& s) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    long n = 0;
    const int h = static_cast<int>(s.image.shape.h), w = static_cast<int>(s.image.shape.w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (s.mask.at(0, 0, y, x) < scalar(0.5)) continue;
                const double a = s.image.at(0, c, y, x), b = s.background.at(0, c, y, x);
                sx += a;
                sy += b;
                sxx += a * a;
                syy += b * b;
                sxy += a * b;
                ++n;
            }
    if (n == 0) return 0.0;
    const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cv = sxy - sx * sy / n;
    if (vx <= 1e-12 || vy <= 1e-12) return 0.0;
    return cv / std::sqrt(vx * vy);
}

}  // namespace

TEST_CASE("grayscale and color containers round-trip through every format") {
    TempDir tmp;
    std::mt19937_64 g(301);

    SUBCASE("pgm") {
        Tensor t = test_util::rand_tensor({1, 1, 9, 7}, g, 0.0, 1.0);
        save_pgm(tmp.file("a.pgm"), t);
        Tensor back = load_image(tmp.file("a.pgm"));
        REQUIRE(back.shape == t.shape);
        for (index_t i = 0; i < t.numel(); ++i)
            CHECK(back.ptr()[i] == doctest::Approx(quantized(t.ptr()[i])).epsilon(1e-6));
    }
    SUBCASE("ppm") {
        Tensor t = test_util::rand_tensor({1, 3, 5, 6}, g, 0.0, 1.0);
        save_ppm(tmp.file("a.ppm"), t);
        Tensor back = load_image(tmp.file("a.ppm"));
        REQUIRE(back.shape == t.shape);
        for (index_t i = 0; i < t.numel(); ++i)
            CHECK(back.ptr()[i] == doctest::Approx(quantized(t.ptr()[i])).epsilon(1e-6));
    }
    SUBCASE("png gray and color") {
        Tensor t1 = test_util::rand_tensor({1, 1, 8, 11}, g, 0.0, 1.0);
        save_png(tmp.file("g.png"), t1);
        Tensor b1 = load_image(tmp.file("g.png"));
        REQUIRE(b1.shape == t1.shape);
        for (index_t i = 0; i < t1.numel(); ++i)
            CHECK(b1.ptr()[i] == doctest::Approx(quantized(t1.ptr()[i])).epsilon(1e-6));

        Tensor t3 = test_util::rand_tensor({1, 3, 12, 5}, g, 0.0, 1.0);
        save_image(tmp.file("c.png"), t3);
        Tensor b3 = load_image(tmp.file("c.png"));
        REQUIRE(b3.shape == t3.shape);
        for (index_t i = 0; i < t3.numel(); ++i)
            CHECK(b3.ptr()[i] == doctest::Approx(quantized(t3.ptr()[i])).epsilon(1e-6));
    }
    SUBCASE("out-of-range values clamp instead of wrapping") {
        Tensor t = Tensor::zeros({1, 1, 1, 2});
        t.mut()[0] = scalar(-0.5);
        t.mut()[1] = scalar(1.5);
        save_pgm(tmp.file("clamp.pgm"), t);
        Tensor back = load_image(tmp.file("clamp.pgm"));
        CHECK(back.ptr()[0] == scalar(0));
        CHECK(back.ptr()[1] == scalar(1));
    }
}

TEST_CASE("decoder handles filtered PNG scanlines") {
    // Hand-assembled 4x2 grayscale PNG using Sub and Up filters; reconstruction
    // values derived by applying the filter definitions on paper.
    TempDir tmp;
    std::vector<unsigned char> raw = {1, 10, 20, 30, 40,   // Sub:  10, 30, 60, 100
                                      2, 5, 5, 5, 5};      // Up:   15, 35, 65, 105
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(bound);
    REQUIRE(compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) == Z_OK);
    z.resize(bound);

    std::vector<unsigned char> png = {137, 80, 78, 71, 13, 10, 26, 10};
    auto put32 = [&png](std::uint32_t v) {
        png.push_back(static_cast<unsigned char>(v >> 24));
        png.push_back(static_cast<unsigned char>(v >> 16));
        png.push_back(static_cast<unsigned char>(v >> 8));
        png.push_back(static_cast<unsigned char>(v));
    };
    auto chunk = [&](const char* type, const std::vector<unsigned char>& payload) {
        put32(static_cast<std::uint32_t>(payload.size()));
        const std::size_t s = png.size();
        png.insert(png.end(), type, type + 4);
        png.insert(png.end(), payload.begin(), payload.end());
        put32(static_cast<std::uint32_t>(
            crc32(crc32(0L, Z_NULL, 0), png.data() + s, static_cast<uInt>(png.size() - s))));
    };
    std::vector<unsigned char> ihdr;
    {
        std::vector<unsigned char>& v = ihdr;
        auto p32 = [&v](std::uint32_t x) {
            v.push_back(static_cast<unsigned char>(x >> 24));
            v.push_back(static_cast<unsigned char>(x >> 16));
            v.push_back(static_cast<unsigned char>(x >> 8));
            v.push_back(static_cast<unsigned char>(x));
        };
        p32(4);  // width
        p32(2);  // height
        v.push_back(8);
        v.push_back(0);
        v.push_back(0);
        v.push_back(0);
        v.push_back(0);
    }
    chunk("IHDR", ihdr);
    chunk("IDAT", z);
    chunk("IEND", {});
    {
        std::ofstream out(tmp.file("f.png"), std::ios::binary);
        out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    }
    Tensor t = load_image(tmp.file("f.png"));
    REQUIRE(t.shape == Shape{1, 1, 2, 4});
    const int want[2][4] = {{10, 30, 60, 100}, {15, 35, 65, 105}};
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(t.at(0, 0, y, x) == doctest::Approx(want[y][x] / 255.0).epsilon(1e-6));
}

TEST_CASE("loader errors name their cause") {
    TempDir tmp;
    CHECK_THROWS_WITH_AS(load_image(tmp.file("missing.pgm")),
                         doctest::Contains("file not found"), std::runtime_error);
    {
        std::ofstream out(tmp.file("deep.pgm"), std::ios::binary);
        out << "P5\n2 2\n65535\n" << std::string(8, '\0');
    }
    CHECK_THROWS_WITH_AS(load_image(tmp.file("deep.pgm")),
                         doctest::Contains("unsupported bit depth"), std::runtime_error);
    {
        std::ofstream out(tmp.file("junk.img"), std::ios::binary);
        out << "not an image at all";
    }
    CHECK_THROWS_WITH_AS(load_image(tmp.file("junk.img")),
                         doctest::Contains("unsupported image format"), std::runtime_error);
    {
        std::ofstream out(tmp.file("short.pgm"), std::ios::binary);
        out << "P5\n4 4\n255\n" << std::string(3, '\0');
    }
    CHECK_THROWS_WITH_AS(load_image(tmp.file("short.pgm")), doctest::Contains("truncated"),
                         std::runtime_error);
}

TEST_CASE("mask files round-trip exactly") {
    TempDir tmp;
    std::mt19937_64 g(302);
    Tensor m = test_util::rand_mask({1, 1, 16, 16}, g, 0.4);
    for (const char* name : {"m.pgm", "m.png"}) {
        save_mask(tmp.file(name), m);
        Tensor raw = load_image(tmp.file(name));
        Tensor back(raw.shape);
        for (index_t i = 0; i < raw.numel(); ++i)
            back.mut()[i] = raw.ptr()[i] >= scalar(128.0 / 255.0) ? scalar(1) : scalar(0);
        CHECK(bitwise_equal(back, m));
    }
}

TEST_CASE("scene generator is deterministic per seed") {
    SceneConfig cfg;
    SamplePair a = gen_synthetic(cfg, 42), b = gen_synthetic(cfg, 42);
    CHECK(bitwise_equal(a.image, b.image));
    CHECK(bitwise_equal(a.mask, b.mask));
    SamplePair c = gen_synthetic(cfg, 43);
    CHECK_FALSE(bitwise_equal(a.image, c.image));
}

TEST_CASE("fully transmissive glass reproduces the background bit for bit") {
    SceneConfig cfg;
    cfg.alpha_lo = cfg.alpha_hi = 1;  // degenerate: pure transmission
    cfg.highlight_prob = 0;
    cfg.min_regions = cfg.max_regions = 1;
    SceneSample s = gen_synthetic_scene(cfg, 7);
    REQUIRE(glass_fraction(s.mask) > 0.0);
    // Away from the darker frame at the perimeter, interior pixels must equal
    // the background exactly. "Away" = mask pixels whose 7x7 neighborhood is
    // fully inside the mask.
    const int h = cfg.h, w = cfg.w;
    int interior = 0;
    for (int y = 3; y < h - 3; ++y)
        for (int x = 3; x < w - 3; ++x) {
            bool deep = true;
            for (int dy = -3; dy <= 3 && deep; ++dy)
                for (int dx = -3; dx <= 3 && deep; ++dx)
                    if (s.mask.at(0, 0, y + dy, x + dx) < scalar(0.5)) deep = false;
            if (!deep) continue;
            ++interior;
            for (int c = 0; c < 3; ++c) CHECK(s.image.at(0, c, y, x) == s.background.at(0, c, y, x));
        }
    CHECK(interior > 0);
}

TEST_CASE("every generated mask is usable for boundary supervision") {
    SceneConfig cfg;
    for (int seed = 0; seed < 30; ++seed) {
        SamplePair s = gen_synthetic(cfg, 5000 + seed);
        const double frac = glass_fraction(s.mask);
        CHECK(frac >= 0.05);
        CHECK(frac <= 0.7);
        Tensor edges = canny_boundary(s.mask, scalar(0.1), scalar(0.3));
        double any = 0;
        for (index_t i = 0; i < edges.numel(); ++i) any += edges.ptr()[i];
        CHECK(any > 0.0);
    }
}

TEST_CASE("glass interiors carry the background through; opaque fills do not") {
    SceneConfig glass;
    SceneConfig opaque = glass;
    opaque.alpha_lo = opaque.alpha_hi = 0;  // control: no transmission at all
    double mg = 0, mo = 0;
    const int samples = 200;
    for (int i = 0; i < samples; ++i) {
        mg += std::abs(mask_correlation(gen_synthetic_scene(glass, 1000 + i)));
        mo += std::abs(mask_correlation(gen_synthetic_scene(opaque, 1000 + i)));
    }
    mg /= samples;
    mo /= samples;
    CHECK(mg > mo + 0.15);
}

TEST_CASE("manifests round-trip and keep listed order") {
    TempDir tmp;
    fs::create_directories(tmp.path / "images");
    fs::create_directories(tmp.path / "masks");
    SceneConfig cfg;
    std::vector<SamplePair> made;
    DatasetManifest m;
    m.root = tmp.path.string();
    m.split = "train";
    for (int i = 0; i < 3; ++i) {
        SamplePair s = gen_synthetic(cfg, 9000 + i);
        const std::string img = "images/s" + std::to_string(i) + ".ppm";
        const std::string msk = "masks/s" + std::to_string(i) + ".pgm";
        save_image(tmp.file(img), s.image);
        save_mask(tmp.file(msk), s.mask);
        m.pairs.emplace_back(img, msk);
        made.push_back(std::move(s));
    }
    save_manifest(tmp.file("train.txt"), m);

    DatasetManifest back = load_manifest(tmp.file("train.txt"));
    CHECK(back.split == "train");
    CHECK(back.root == tmp.path.string());
    REQUIRE(back.pairs.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back.pairs[i].first == m.pairs[i].first);
        SamplePair s = load_sample(back, static_cast<std::size_t>(i));
        CHECK(bitwise_equal(s.mask, made[static_cast<std::size_t>(i)].mask));
        double worst = 0;
        for (index_t j = 0; j < s.image.numel(); ++j)
            worst = std::max(worst, std::abs(static_cast<double>(s.image.ptr()[j]) -
                                             made[static_cast<std::size_t>(i)].image.ptr()[j]));
        CHECK(worst <= 0.51 / 255.0);  // 8-bit quantization only
    }
}

TEST_CASE("manifest and sample loading reject broken inputs") {
    TempDir tmp;
    CHECK_THROWS_WITH_AS(load_manifest(tmp.file("none.txt")), doctest::Contains("not found"),
                         std::runtime_error);
    {
        std::ofstream out(tmp.file("bad.txt"));
        out << "# comment line\n\nimages/a.pgm masks/a.pgm extra_token\n";
    }
    CHECK_THROWS_WITH_AS(load_manifest(tmp.file("bad.txt")), doctest::Contains("exactly"),
                         std::runtime_error);
    {
        std::ofstream out(tmp.file("ghost.txt"));
        out << "images/missing.pgm masks/missing.pgm\n";
    }
    CHECK_THROWS_WITH_AS(load_manifest(tmp.file("ghost.txt")), doctest::Contains("missing file"),
                         std::runtime_error);

    // Size mismatch between image and mask.
    fs::create_directories(tmp.path / "images");
    fs::create_directories(tmp.path / "masks");
    std::mt19937_64 g(303);
    save_image(tmp.file("images/a.ppm"), test_util::rand_tensor({1, 3, 8, 8}, g, 0.0, 1.0));
    save_mask(tmp.file("masks/a.pgm"), test_util::rand_mask({1, 1, 4, 4}, g, 0.5));
    {
        std::ofstream out(tmp.file("mismatch.txt"));
        out << "images/a.ppm masks/a.pgm\n";
    }
    DatasetManifest mm = load_manifest(tmp.file("mismatch.txt"));
    CHECK_THROWS_WITH_AS(load_sample(mm, 0), doctest::Contains("size mismatch"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(load_sample(mm, 5), doctest::Contains("out of range"),
                         std::runtime_error);

    // Color mask is not a mask.
    save_image(tmp.file("masks/c.ppm"), test_util::rand_tensor({1, 3, 8, 8}, g, 0.0, 1.0));
    {
        std::ofstream out(tmp.file("colormask.txt"));
        out << "images/a.ppm masks/c.ppm\n";
    }
    DatasetManifest cm = load_manifest(tmp.file("colormask.txt"));
    CHECK_THROWS_WITH_AS(load_sample(cm, 0), doctest::Contains("single-channel"),
                         std::runtime_error);

    // A test-split filename tags the manifest as test.
    {
        std::ofstream out(tmp.file("test.txt"));
        out << "images/a.ppm masks/a.pgm\n";
    }
    CHECK(load_manifest(tmp.file("test.txt")).split == "test");
}

TEST_CASE("augmentation keeps pairs aligned and masks binary") {
    SceneConfig cfg;
    SUBCASE("mirror is an exact involution") {
        std::mt19937_64 g(304);
        Tensor t = test_util::rand_tensor({2, 3, 6, 7}, g);
        CHECK(bitwise_equal(hflip_image(hflip_image(t)), t));
    }
    SUBCASE("boundary extraction commutes with the mirror") {
        SamplePair s = gen_synthetic(cfg, 11);
        Tensor lhs = canny_boundary(hflip_image(s.mask), scalar(0.1), scalar(0.3));
        Tensor rhs = hflip_image(canny_boundary(s.mask, scalar(0.1), scalar(0.3)));
        CHECK(bitwise_equal(lhs, rhs));
    }
    SUBCASE("output shape, binarity, and determinism") {
        SamplePair s = gen_synthetic(cfg, 12);
        std::mt19937_64 g1(55), g2(55);
        SamplePair a = augment(s, g1, 48, 80);
        CHECK(a.image.shape == Shape{1, 3, 48, 80});
        CHECK(a.mask.shape == Shape{1, 1, 48, 80});
        for (index_t i = 0; i < a.mask.numel(); ++i) {
            const bool binary = a.mask.ptr()[i] == scalar(0) || a.mask.ptr()[i] == scalar(1);
            CHECK(binary);
        }
        SamplePair b = augment(s, g2, 48, 80);
        CHECK(bitwise_equal(a.image, b.image));
        CHECK(bitwise_equal(a.mask, b.mask));
    }
    SUBCASE("glass area is stable under augmentation") {
        std::mt19937_64 ar(7);
        for (int i = 0; i < 20; ++i) {
            SamplePair s = gen_synthetic(cfg, 2000 + i);
            SamplePair a = augment(s, ar, 64, 64);
            CHECK(std::abs(glass_fraction(a.mask) - glass_fraction(s.mask)) <= 0.05);
        }
    }
}
