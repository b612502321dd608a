#include "fbwc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fbwc/image_io.hpp"
#include "fbwc/ops.hpp"
#include "fbwc/rng.hpp"

namespace fbwc {

namespace {

// Smooth value noise: per-octave random lattice values, smoothstep-blended.
std::vector<double> value_noise(int h, int w, int octaves, int base_cell, std::mt19937_64& g) {
    std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
    double amp = 1.0, total_amp = 0.0;
    int cell = std::max(2, base_cell);
    for (int o = 0; o < octaves; ++o) {
        const int gh = h / cell + 2, gw = w / cell + 2;
        std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
        for (auto& v : lattice) v = rng_uniform(g);
        for (int y = 0; y < h; ++y) {
            const double fy = static_cast<double>(y) / cell;
            const int y0 = static_cast<int>(fy);
            const double ty0 = fy - y0, ty = ty0 * ty0 * (3.0 - 2.0 * ty0);
            for (int x = 0; x < w; ++x) {
                const double fx = static_cast<double>(x) / cell;
                const int x0 = static_cast<int>(fx);
                const double tx0 = fx - x0, tx = tx0 * tx0 * (3.0 - 2.0 * tx0);
                const double v00 = lattice[static_cast<std::size_t>(y0) * gw + x0];
                const double v01 = lattice[static_cast<std::size_t>(y0) * gw + x0 + 1];
                const double v10 = lattice[static_cast<std::size_t>(y0 + 1) * gw + x0];
                const double v11 = lattice[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
                const double top = v00 + (v01 - v00) * tx;
                const double bot = v10 + (v11 - v10) * tx;
                out[static_cast<std::size_t>(y) * w + x] += amp * (top + (bot - top) * ty);
            }
        }
        total_amp += amp;
        amp *= 0.5;
        cell = std::max(2, cell / 2);
    }
    for (auto& v : out) v /= total_amp;
    return out;
}

struct RoundedRect {
    double cx, cy, hx, hy, corner;
};

// Signed distance to a rounded axis-aligned rectangle (negative inside).
double rect_sdf(const RoundedRect& r, double x, double y) {
    const double qx = std::abs(x - r.cx) - (r.hx - r.corner);
    const double qy = std::abs(y - r.cy) - (r.hy - r.corner);
    const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0) - r.corner;
}

struct Attempt {
    Tensor image, mask, background;
    double glass_fraction = 0.0;
};

Attempt generate_once(const SceneConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    const int h = cfg.h, w = cfg.w;

    // Background: smooth noise around a random base color.
    const std::vector<double> lum = value_noise(h, w, cfg.noise_octaves, cfg.noise_cell, g);
    double base[3];
    for (double& b : base) b = rng_range(g, 0.25, 0.75);
    Tensor background({1, 3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = base[c] + (lum[static_cast<std::size_t>(y) * w + x] - 0.5) * 0.8;
                background.mut()[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<scalar>(std::clamp(v, 0.0, 1.0));
            }

    // Glass regions: rounded rectangles with partial background transmission,
    // optional reflection highlights, and a thin darker frame.
    const int regions = rng_int(g, cfg.min_regions, cfg.max_regions);
    Tensor image = background.clone();
    Tensor mask = Tensor::zeros({1, 1, h, w});
    const double frame_w = 1.5;
    for (int reg = 0; reg < regions; ++reg) {
        RoundedRect r;
        r.hx = rng_range(g, w / 8.0, w / 3.0);
        r.hy = rng_range(g, h / 8.0, h / 3.0);
        r.cx = rng_range(g, r.hx * 0.5, w - r.hx * 0.5);
        r.cy = rng_range(g, r.hy * 0.5, h - r.hy * 0.5);
        r.corner = rng_range(g, 1.0, 0.5 * std::min(r.hx, r.hy));
        const scalar alpha = static_cast<scalar>(rng_range(g, cfg.alpha_lo, cfg.alpha_hi));
        scalar tint[3];
        for (scalar& t : tint) t = static_cast<scalar>(rng_range(g, 0.3, 0.9));

        // Reflection highlights, confined to this region.
        struct Blob {
            double cx, cy, sigma, gain;
        };
        std::vector<Blob> blobs;
        if (rng_bernoulli(g, cfg.highlight_prob)) {
            const int nblobs = rng_int(g, 1, 2);
            for (int i = 0; i < nblobs; ++i) {
                Blob b;
                b.cx = rng_range(g, r.cx - r.hx, r.cx + r.hx);
                b.cy = rng_range(g, r.cy - r.hy, r.cy + r.hy);
                b.sigma = rng_range(g, 1.5, std::max(2.0, 0.4 * std::min(r.hx, r.hy)));
                b.gain = rng_range(g, 0.5, 1.0) * cfg.highlight_intensity;
                blobs.push_back(b);
            }
        }

        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d = rect_sdf(r, x, y);
                if (d >= 0.0) continue;
                mask.mut()[static_cast<std::size_t>(y) * w + x] = 1;
                double extra = 0.0;
                for (const Blob& b : blobs) {
                    const double dx = x - b.cx, dy = y - b.cy;
                    extra += b.gain * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                }
                const bool in_frame = d > -frame_w;
                for (int c = 0; c < 3; ++c) {
                    const std::size_t at = (static_cast<std::size_t>(c) * h + y) * w + x;
                    const scalar bg = background.ptr()[at];
                    // (1-a)*tint + a*bg: at a == 1 the interior reproduces the
                    // background bit for bit.
                    scalar v = (scalar(1) - alpha) * tint[c] + alpha * bg;
                    if (extra > 0.0) v = static_cast<scalar>(std::min(1.0, v + extra));
                    if (in_frame) v = static_cast<scalar>(v * 0.55);
                    image.mut()[at] = v;
                }
            }
    }

    Attempt a;
    a.image = std::move(image);
    a.mask = std::move(mask);
    a.background = std::move(background);
    double frac = 0.0;
    for (index_t i = 0; i < a.mask.numel(); ++i) frac += a.mask.ptr()[i];
    a.glass_fraction = frac / static_cast<double>(a.mask.numel());
    return a;
}

}  // namespace

bool scene_config_valid(const SceneConfig& cfg) {
    return cfg.h >= 8 && cfg.w >= 8 && cfg.min_regions >= 1 &&
           cfg.max_regions >= cfg.min_regions && cfg.alpha_lo >= scalar(0.3) &&
           cfg.alpha_hi >= cfg.alpha_lo && cfg.alpha_hi <= scalar(0.95) &&
           cfg.highlight_prob >= 0 && cfg.highlight_prob <= 1 && cfg.noise_octaves >= 1 &&
           cfg.noise_cell >= 2;
}

SceneSample gen_synthetic_scene(const SceneConfig& cfg, std::uint64_t seed) {
    if (cfg.h < 8 || cfg.w < 8) throw std::runtime_error("gen_synthetic: image too small");
    if (cfg.min_regions < 1 || cfg.max_regions < cfg.min_regions)
        throw std::runtime_error("gen_synthetic: bad region count range");
    if (!(cfg.alpha_lo >= 0 && cfg.alpha_hi >= cfg.alpha_lo && cfg.alpha_hi <= 1))
        throw std::runtime_error("gen_synthetic: transmission range must lie in [0,1]");
    // Resample with decorrelated sub-seeds until the glass fraction is sane.
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        Attempt a = generate_once(cfg, seed + attempt * 0x9e3779b97f4a7c15ull);
        if (a.glass_fraction >= 0.05 && a.glass_fraction <= 0.7) {
            SceneSample s;
            s.image = std::move(a.image);
            s.mask = std::move(a.mask);
            s.background = std::move(a.background);
            return s;
        }
    }
    throw std::runtime_error("gen_synthetic: could not reach target glass fraction");
}

SamplePair gen_synthetic(const SceneConfig& cfg, std::uint64_t seed) {
    SceneSample s = gen_synthetic_scene(cfg, seed);
    return SamplePair{std::move(s.image), std::move(s.mask)};
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest not found: " + path);
    DatasetManifest m;
    const std::size_t slash = path.find_last_of('/');
    m.root = slash == std::string::npos ? std::string(".") : path.substr(0, slash);
    const std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
    m.split = stem.find("test") != std::string::npos ? "test" : "train";
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string img, msk, extra;
        if (!(ls >> img)) continue;  // blank/comment line
        if (!(ls >> msk) || (ls >> extra))
            throw std::runtime_error("manifest " + path + " line " + std::to_string(lineno) +
                                     ": want exactly `<image> <mask>`");
        m.pairs.emplace_back(img, msk);
    }
    for (const auto& [img, msk] : m.pairs) {
        for (const std::string& rel : {img, msk}) {
            std::ifstream probe(m.root + "/" + rel, std::ios::binary);
            if (!probe)
                throw std::runtime_error("manifest references missing file: " + m.root + "/" + rel);
        }
    }
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# image mask\n";
    for (const auto& [img, msk] : m.pairs) out << img << " " << msk << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

SamplePair load_sample(const DatasetManifest& m, std::size_t idx) {
    if (idx >= m.pairs.size())
        throw std::runtime_error("sample index " + std::to_string(idx) + " out of range (" +
                                 std::to_string(m.pairs.size()) + " pairs)");
    SamplePair s;
    s.image = load_image(m.root + "/" + m.pairs[idx].first);
    Tensor raw_mask = load_image(m.root + "/" + m.pairs[idx].second);
    if (raw_mask.shape.c != 1)
        throw std::runtime_error("mask must be single-channel: " + m.pairs[idx].second);
    if (s.image.shape.h != raw_mask.shape.h || s.image.shape.w != raw_mask.shape.w)
        throw std::runtime_error("size mismatch between image " + m.pairs[idx].first + " (" +
                                 s.image.shape.str() + ") and mask " + m.pairs[idx].second + " (" +
                                 raw_mask.shape.str() + ")");
    // 8-bit masks come in as v/255; glass is any level >= 128.
    Tensor mask(raw_mask.shape);
    for (index_t i = 0; i < raw_mask.numel(); ++i)
        mask.mut()[i] = raw_mask.ptr()[i] >= scalar(128.0 / 255.0) ? scalar(1) : scalar(0);
    s.mask = std::move(mask);
    return s;
}

Tensor hflip_image(const Tensor& t) {
    Tensor out(t.shape);
    const index_t n = t.shape.n, c = t.shape.c, h = t.shape.h, w = t.shape.w;
    for (index_t img = 0; img < n * c; ++img)
        for (index_t y = 0; y < h; ++y)
            for (index_t x = 0; x < w; ++x)
                out.mut()[(img * h + y) * w + x] = t.ptr()[(img * h + y) * w + (w - 1 - x)];
    return out;
}

SamplePair augment(const SamplePair& s, std::mt19937_64& rng, int target_h, int target_w) {
    const bool flip = rng_bernoulli(rng, 0.5);
    const double sc = rng_range(rng, 0.75, 1.25);
    const int sh = std::max<int>(1, static_cast<int>(std::lround(s.image.shape.h * sc)));
    const int sw = std::max<int>(1, static_cast<int>(std::lround(s.image.shape.w * sc)));
    Tensor img = bilinear_resize(bilinear_resize(s.image, sh, sw), target_h, target_w);
    Tensor msk = bilinear_resize(bilinear_resize(s.mask, sh, sw), target_h, target_w);
    if (flip) {
        img = hflip_image(img);
        msk = hflip_image(msk);
    }
    for (index_t i = 0; i < msk.numel(); ++i)
        msk.mut()[i] = msk.ptr()[i] >= scalar(0.5) ? scalar(1) : scalar(0);
    return SamplePair{std::move(img), std::move(msk)};
}

}  // namespace fbwc
