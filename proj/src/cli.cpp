#include "fbwc/cli.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fbwc/data.hpp"
#include "fbwc/fft.hpp"
#include "fbwc/image_io.hpp"
#include "fbwc/losses.hpp"
#include "fbwc/model.hpp"
#include "fbwc/ops.hpp"
#include "fbwc/rng.hpp"
#include "fbwc/tensor.hpp"
#include "fbwc/train.hpp"

namespace fbwc {
namespace {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& leaf) {
    return (fs::path(dir) / leaf).string();
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Applies `key = value` lines (comments with '#', blank lines allowed) onto
// cfg. Returns an error message, or "" on success.
std::string apply_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) return "cannot open config file: " + path;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            return path + " line " + std::to_string(lineno) + ": want `key = value`";
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (!train_config_apply(cfg, key, value))
                return path + " line " + std::to_string(lineno) + ": unknown config key '" +
                       key + "'";
        } catch (const std::exception& e) {
            return path + " line " + std::to_string(lineno) + ": bad value for '" + key +
                   "': " + e.what();
        }
    }
    return "";
}

// Registers the TrainConfig-backed flags on a subcommand, bound directly to
// the struct fields. Values already in cfg (defaults or config file) survive
// unless the flag is given, which yields the CLI > file > default precedence.
void add_train_flags(CLI::App* sc, TrainConfig& cfg) {
    sc->add_option("--epochs", cfg.epochs, "training epochs");
    sc->add_option("--batch", cfg.batch, "batch size");
    sc->add_option("--base-lr", cfg.base_lr, "initial learning rate");
    sc->add_option("--momentum", cfg.momentum, "SGD momentum");
    sc->add_option("--weight-decay", cfg.weight_decay, "L2 coupling on conv weights");
    sc->add_option("--poly-power", cfg.poly_power, "polynomial LR decay exponent");
    sc->add_option("--n-units", cfg.n_units, "number of chained catcher units");
    sc->add_option("--depth", cfg.depth, "encoder levels per unit");
    sc->add_option("--lambda", cfg.lambda, "stem downsampling factor (power of two)");
    sc->add_option("--channels", cfg.channels, "working channel width");
    sc->add_option("--img-h", cfg.img_h, "training image height");
    sc->add_option("--img-w", cfg.img_w, "training image width");
    sc->add_option("--seed", cfg.seed, "run seed");
    sc->add_option("--ckpt-every", cfg.ckpt_every, "extra checkpoint every K epochs (0 = final only)");
    sc->add_flag("--am-off", cfg.am_off, "drop the attention-map loss term");
    sc->add_flag("--bc-off", cfg.bc_off, "drop the boundary-constraint loss terms");
    sc->add_flag("--cta-off", cfg.cta_off, "bypass the attention blocks");
    sc->add_flag("--use-scc", cfg.use_scc, "spatial conv instead of spectral enhancement");
    sc->add_flag("--use-ca", cfg.use_ca, "per-pixel gating instead of channel affinity");
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    int count = 64;
    std::uint64_t seed = 1;
    SceneConfig sc;
};

// Writes count image/mask pairs plus manifest.txt under args.out and returns
// the manifest. Sample i uses seed args.seed + i, so a fixed (config, seed)
// reproduces the directory bitwise.
DatasetManifest write_dataset(const GenDataArgs& args, double* mean_fraction) {
    fs::create_directories(join(args.out, "images"));
    fs::create_directories(join(args.out, "masks"));
    DatasetManifest m;
    m.root = args.out;
    m.split = "train";
    double frac = 0;
    for (int i = 0; i < args.count; ++i) {
        const SamplePair s = gen_synthetic(args.sc, args.seed + static_cast<std::uint64_t>(i));
        const std::string img = "images/s" + std::to_string(i) + ".png";
        const std::string msk = "masks/s" + std::to_string(i) + ".png";
        save_image(join(args.out, img), s.image);
        save_mask(join(args.out, msk), s.mask);
        m.pairs.emplace_back(img, msk);
        double f = 0;
        for (index_t j = 0; j < s.mask.numel(); ++j) f += s.mask.ptr()[j];
        frac += f / static_cast<double>(s.mask.numel());
    }
    save_manifest(join(args.out, "manifest.txt"), m);
    if (mean_fraction) *mean_fraction = args.count > 0 ? frac / args.count : 0.0;
    return m;
}

int cmd_gen_data(const GenDataArgs& args) {
    if (args.count < 1) {
        std::fprintf(stderr, "gen-data: --count must be >= 1\n");
        return 1;
    }
    if (!scene_config_valid(args.sc)) {
        std::fprintf(stderr,
                     "gen-data: scene config rejected (need positive sizes, 1 <= min-regions <= "
                     "max-regions, alpha range within [0.3, 0.95], probabilities in [0, 1])\n");
        return 1;
    }
    double frac = 0;
    write_dataset(args, &frac);
    std::printf("wrote %d image/mask pairs under %s (mean glass fraction %.4f)\n", args.count,
                args.out.c_str(), frac);
    return 0;
}

// ---------------------------------------------------------------------------
// train / eval / predict
// ---------------------------------------------------------------------------

int cmd_train(const TrainConfig& cfg, const std::string& data_path, const std::string& out_dir) {
    const DatasetManifest m = load_manifest(data_path);
    const TrainResult r = train(cfg, m, out_dir);
    std::printf("trained %d epochs (%lld steps): total %.6f -> %.6f\n", cfg.epochs,
                static_cast<long long>(r.epochs.back().iter), r.epochs.front().total,
                r.epochs.back().total);
    std::printf("checkpoint: %s\nlog: %s\n", r.checkpoint_path.c_str(), r.log_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& csv,
             const std::string& pred_dir) {
    const LoadedCheckpoint lc = load_checkpoint(ckpt);
    const DatasetManifest m = load_manifest(data_path);
    const MetricsRecord mr = evaluate(lc.model, lc.store, m, csv, pred_dir);
    std::printf("iou=%.6f mae=%.6f ber=%.4f n=%zu\n", mr.iou, mr.mae, mr.ber, m.pairs.size());
    return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& image_path,
                const std::string& out_path) {
    const LoadedCheckpoint lc = load_checkpoint(ckpt);
    Tensor img = load_image(image_path);
    if (img.shape.c == 1) {
        Tensor rgb(Shape{1, 3, img.shape.h, img.shape.w});
        const index_t plane = img.numel();
        for (int c = 0; c < 3; ++c)
            for (index_t j = 0; j < plane; ++j) rgb.mut()[c * plane + j] = img.ptr()[j];
        img = rgb;
    }
    const int in_h = lc.model.cfg.in_h, in_w = lc.model.cfg.in_w;
    const int src_h = img.shape.h, src_w = img.shape.w;
    Tensor net_in = (src_h == in_h && src_w == in_w) ? img : bilinear_resize(img, in_h, in_w);
    const ModelOutputs out = lc.model.forward(net_in, lc.store, Mode::eval);
    Tensor probs = sigmoid(out.seg_logits);
    if (src_h != in_h || src_w != in_w) probs = bilinear_resize(probs, src_h, src_w);
    save_mask(out_path, probs);
    std::printf("wrote %s (%dx%d)\n", out_path.c_str(), src_w, src_h);
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

Tensor rand_tensor(Shape s, std::mt19937_64& g, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (index_t i = 0; i < t.numel(); ++i)
        t.mut()[i] = static_cast<scalar>(rng_range(g, lo, hi));
    return t;
}

// Values pushed away from zero so +-step never crosses the relu kink.
Tensor rand_margined(Shape s, std::mt19937_64& g, double margin = 0.2) {
    Tensor t(s);
    for (index_t i = 0; i < t.numel(); ++i) {
        const double m = rng_range(g, margin, 1.0);
        t.mut()[i] = static_cast<scalar>(rng_bernoulli(g, 0.5) ? m : -m);
    }
    return t;
}

// Well-separated values so a +-step perturbation cannot reorder any pooling
// window: a shuffled integer grid scaled down.
Tensor rand_separated(Shape s, std::mt19937_64& g) {
    std::vector<scalar> vals(static_cast<std::size_t>(s.numel()));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<scalar>(i);
    rng_shuffle(g, vals);
    Tensor t(s, std::move(vals));
    for (index_t i = 0; i < t.numel(); ++i) t.mut()[i] *= scalar(0.1);
    return t;
}

// Logits whose true-class probability stays clear of the 0.7 mining
// threshold: |z| in [1.2, 2.5] puts p_true in [0.77, 0.92] or [0.08, 0.23].
void ohem_case(Shape s, std::mt19937_64& g, Tensor& logits, Tensor& target) {
    logits = Tensor(s);
    target = Tensor(s);
    for (index_t i = 0; i < s.numel(); ++i) {
        const double z = rng_range(g, 1.2, 2.5);
        const bool pos = rng_bernoulli(g, 0.5);
        const bool confident = rng_bernoulli(g, 0.5);
        target.mut()[i] = pos ? scalar(1) : scalar(0);
        const double sign = (pos == confident) ? 1.0 : -1.0;
        logits.mut()[i] = static_cast<scalar>(sign * z);
    }
}

struct CheckCase {
    std::string name;
    std::function<GradcheckReport(std::mt19937_64&)> run;
};

// Random-projection loss keeps |f| small and gradients generically nonzero.
// Quarter-scale projection: finite-difference noise is proportional to |f|,
// and the error floor is absolute, so a smaller loss buys margin directly.
GradcheckReport project_check(const std::function<Tensor(Tape&, const Tensor&)>& op,
                              const Tensor& input, Shape out_shape, std::mt19937_64& g,
                              double step) {
    const Tensor proj = rand_tensor(out_shape, g, -0.25, 0.25);
    auto graph = [&](Tape& tape, const Tensor& v) {
        return sum_all(mul(op(tape, v), proj));
    };
    return gradcheck(graph, input, step, 1e-2);
}

std::vector<CheckCase> gradcheck_battery() {
    // Piecewise-linear graphs have zero FD truncation error, so they use the
    // wider 1e-2 step (pure noise suppression); smooth ops keep 1e-3.
    const double kLin = 1e-2, kSmooth = 3e-3;
    std::vector<CheckCase> cases;
    auto add = [&](const std::string& n, std::function<GradcheckReport(std::mt19937_64&)> f) {
        cases.push_back({n, std::move(f)});
    };

    add("add.lhs", [=](std::mt19937_64& g) {
        const Shape s{2, 3, 4, 4};
        const Tensor b = rand_tensor(s, g);
        return project_check([&](Tape&, const Tensor& v) { return fbwc::add(v, b); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("sub.rhs", [=](std::mt19937_64& g) {
        const Shape s{2, 3, 4, 4};
        const Tensor a = rand_tensor(s, g);
        return project_check([&](Tape&, const Tensor& v) { return sub(a, v); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("mul.lhs", [=](std::mt19937_64& g) {
        const Shape s{2, 3, 4, 4};
        const Tensor b = rand_tensor(s, g);
        return project_check([&](Tape&, const Tensor& v) { return mul(v, b); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("scale", [=](std::mt19937_64& g) {
        const Shape s{1, 2, 5, 5};
        return project_check([&](Tape&, const Tensor& v) { return scale(v, -1.7); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("relu", [=](std::mt19937_64& g) {
        const Shape s{2, 2, 4, 4};
        return project_check([&](Tape&, const Tensor& v) { return relu(v); },
                             rand_margined(s, g), s, g, kLin);
    });
    add("sigmoid", [=](std::mt19937_64& g) {
        const Shape s{2, 2, 4, 4};
        return project_check([&](Tape&, const Tensor& v) { return sigmoid(v); },
                             rand_tensor(s, g, -2, 2), s, g, kSmooth);
    });
    add("softplus", [=](std::mt19937_64& g) {
        const Shape s{2, 2, 4, 4};
        return project_check([&](Tape&, const Tensor& v) { return softplus(v); },
                             rand_tensor(s, g, -2, 2), s, g, kSmooth);
    });
    add("sum_all", [=](std::mt19937_64& g) {
        auto graph = [](Tape&, const Tensor& v) { return sum_all(v); };
        return gradcheck(graph, rand_tensor(Shape{2, 3, 3, 3}, g), kLin, 1e-2);
    });
    add("matmul.lhs", [=](std::mt19937_64& g) {
        const Tensor b = rand_tensor(Shape{2, 1, 4, 5}, g);
        return project_check([&](Tape&, const Tensor& v) { return matmul(v, b); },
                             rand_tensor(Shape{2, 1, 3, 4}, g), Shape{2, 1, 3, 5}, g, kLin);
    });
    add("matmul.rhs", [=](std::mt19937_64& g) {
        const Tensor a = rand_tensor(Shape{2, 1, 3, 4}, g);
        return project_check([&](Tape&, const Tensor& v) { return matmul(a, v); },
                             rand_tensor(Shape{2, 1, 4, 5}, g), Shape{2, 1, 3, 5}, g, kLin);
    });
    add("transpose", [=](std::mt19937_64& g) {
        return project_check([&](Tape&, const Tensor& v) { return transpose(v); },
                             rand_tensor(Shape{2, 2, 3, 5}, g), Shape{2, 2, 5, 3}, g, kLin);
    });
    add("reshape", [=](std::mt19937_64& g) {
        const Shape to{1, 1, 6, 8};
        return project_check([&](Tape&, const Tensor& v) { return reshape(v, to); },
                             rand_tensor(Shape{2, 3, 2, 4}, g), to, g, kLin);
    });
    add("conv2d.input", [=](std::mt19937_64& g) {
        const Tensor k = rand_tensor(Shape{4, 3, 3, 3}, g);
        const Tensor b = rand_tensor(Shape{1, 4, 1, 1}, g);
        return project_check([&](Tape&, const Tensor& v) { return conv2d(v, k, b, 1, 1); },
                             rand_tensor(Shape{2, 3, 6, 6}, g), Shape{2, 4, 6, 6}, g, kLin);
    });
    add("conv2d.kernel", [=](std::mt19937_64& g) {
        const Tensor x = rand_tensor(Shape{2, 3, 6, 6}, g);
        const Tensor b = rand_tensor(Shape{1, 4, 1, 1}, g);
        return project_check([&](Tape&, const Tensor& v) { return conv2d(x, v, b, 1, 1); },
                             rand_tensor(Shape{4, 3, 3, 3}, g), Shape{2, 4, 6, 6}, g, kLin);
    });
    add("conv2d.bias", [=](std::mt19937_64& g) {
        const Tensor x = rand_tensor(Shape{2, 3, 6, 6}, g);
        const Tensor k = rand_tensor(Shape{4, 3, 3, 3}, g);
        return project_check([&](Tape&, const Tensor& v) { return conv2d(x, k, v, 1, 1); },
                             rand_tensor(Shape{1, 4, 1, 1}, g), Shape{2, 4, 6, 6}, g, kLin);
    });
    add("maxpool2", [=](std::mt19937_64& g) {
        return project_check([&](Tape&, const Tensor& v) { return maxpool2(v); },
                             rand_separated(Shape{1, 2, 6, 6}, g), Shape{1, 2, 3, 3}, g, kLin);
    });
    add("bilinear_resize", [=](std::mt19937_64& g) {
        return project_check([&](Tape&, const Tensor& v) { return bilinear_resize(v, 7, 5); },
                             rand_tensor(Shape{1, 2, 4, 4}, g), Shape{1, 2, 7, 5}, g, kLin);
    });
    add("batchnorm.input", [=](std::mt19937_64& g) {
        const Tensor gamma = rand_tensor(Shape{1, 3, 1, 1}, g, 0.5, 1.5);
        const Tensor beta = rand_tensor(Shape{1, 3, 1, 1}, g);
        return project_check(
            [&](Tape&, const Tensor& v) {
                BatchNormState st = BatchNormState::make(3);
                return batchnorm(v, gamma, beta, st, Mode::train);
            },
            rand_tensor(Shape{2, 3, 4, 4}, g), Shape{2, 3, 4, 4}, g, kSmooth);
    });
    add("batchnorm.gamma", [=](std::mt19937_64& g) {
        const Tensor x = rand_tensor(Shape{2, 3, 4, 4}, g);
        const Tensor beta = rand_tensor(Shape{1, 3, 1, 1}, g);
        return project_check(
            [&](Tape&, const Tensor& v) {
                BatchNormState st = BatchNormState::make(3);
                return batchnorm(x, v, beta, st, Mode::train);
            },
            rand_tensor(Shape{1, 3, 1, 1}, g, 0.5, 1.5), Shape{2, 3, 4, 4}, g, kSmooth);
    });
    add("batchnorm.beta", [=](std::mt19937_64& g) {
        const Tensor x = rand_tensor(Shape{2, 3, 4, 4}, g);
        const Tensor gamma = rand_tensor(Shape{1, 3, 1, 1}, g, 0.5, 1.5);
        return project_check(
            [&](Tape&, const Tensor& v) {
                BatchNormState st = BatchNormState::make(3);
                return batchnorm(x, gamma, v, st, Mode::train);
            },
            rand_tensor(Shape{1, 3, 1, 1}, g), Shape{2, 3, 4, 4}, g, kSmooth);
    });
    add("real_fft_map.pow2", [=](std::mt19937_64& g) {
        const Shape s{1, 2, 8, 8};
        return project_check([&](Tape&, const Tensor& v) { return real_fft_map(v); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("real_fft_map.padded", [=](std::mt19937_64& g) {
        const Shape s{1, 1, 6, 6};
        return project_check([&](Tape&, const Tensor& v) { return real_fft_map(v); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("fourier_enhance.input", [=](std::mt19937_64& g) {
        const Tensor k = rand_tensor(Shape{3, 3, 1, 1}, g);
        const Tensor b = rand_tensor(Shape{1, 3, 1, 1}, g);
        const Shape s{1, 3, 8, 8};
        return project_check([&](Tape&, const Tensor& v) { return fourier_enhance(v, k, b); },
                             rand_tensor(s, g), s, g, kLin);
    });
    add("fourier_enhance.kernel", [=](std::mt19937_64& g) {
        const Shape s{1, 3, 8, 8};
        const Tensor x = rand_tensor(s, g);
        const Tensor b = rand_tensor(Shape{1, 3, 1, 1}, g);
        return project_check([&](Tape&, const Tensor& v) { return fourier_enhance(x, v, b); },
                             rand_tensor(Shape{3, 3, 1, 1}, g), s, g, kLin);
    });
    add("bce_logits", [=](std::mt19937_64& g) {
        const Shape s{2, 1, 4, 4};
        Tensor target(s);
        for (index_t i = 0; i < s.numel(); ++i)
            target.mut()[i] = rng_bernoulli(g, 0.5) ? scalar(1) : scalar(0);
        auto graph = [&](Tape&, const Tensor& v) { return bce_logits(v, target); };
        return gradcheck(graph, rand_tensor(s, g, -2, 2), kSmooth, 1e-2);
    });
    add("ohem_ce.mined", [=](std::mt19937_64& g) {
        const Shape s{2, 1, 4, 4};
        Tensor logits, target;
        ohem_case(s, g, logits, target);
        auto graph = [&](Tape&, const Tensor& v) { return ohem_ce(v, target); };
        return gradcheck(graph, logits, kSmooth, 1e-2);
    });
    add("ohem_ce.keep_all", [=](std::mt19937_64& g) {
        const Shape s{2, 1, 4, 4};
        Tensor target(s);
        for (index_t i = 0; i < s.numel(); ++i)
            target.mut()[i] = rng_bernoulli(g, 0.5) ? scalar(1) : scalar(0);
        auto graph = [&](Tape&, const Tensor& v) { return ohem_ce(v, target, scalar(1.0)); };
        return gradcheck(graph, rand_tensor(s, g, -2, 2), kSmooth, 1e-2);
    });
    return cases;
}

std::vector<OpCheckResult> run_battery(const std::string& filter, std::uint64_t seed) {
    std::vector<OpCheckResult> results;
    for (const CheckCase& c : gradcheck_battery()) {
        if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
        std::mt19937_64 g(seed * 0x9e3779b97f4a7c15ull + 0xda3e39cb94b95bdbull);
        const GradcheckReport r = c.run(g);
        results.push_back({c.name, r.max_rel_err, r.pass});
    }
    return results;
}

int cmd_gradcheck(const std::string& filter, std::uint64_t seed) {
    const std::vector<OpCheckResult> results = run_battery(filter, seed);
    if (results.empty()) {
        std::fprintf(stderr, "gradcheck: no case matches '%s'; available:\n", filter.c_str());
        for (const CheckCase& c : gradcheck_battery())
            std::fprintf(stderr, "  %s\n", c.name.c_str());
        return 1;
    }
    std::size_t n_pass = 0;
    for (const OpCheckResult& r : results) {
        if (r.pass) ++n_pass;
        std::printf("gradcheck %-24s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
    }
    std::printf("gradcheck: %zu/%zu pass\n", n_pass, results.size());
    return n_pass == results.size() ? 0 : 2;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateVariant {
    std::string label;
    TrainConfig cfg;
};

int cmd_ablate(const std::string& axis, int min_v, int max_v, const TrainConfig& base,
               const std::string& data_path, const std::string& out_dir, int gen_count) {
    std::vector<AblateVariant> variants;
    if (axis == "cus") {
        const int lo = min_v > 0 ? min_v : 1, hi = max_v > 0 ? max_v : 5;
        if (lo < 1 || hi > 5 || lo > hi) {
            std::fprintf(stderr, "ablate: cus axis wants 1 <= min <= max <= 5\n");
            return 1;
        }
        for (int k = lo; k <= hi; ++k) {
            TrainConfig c = base;
            c.n_units = k;
            variants.push_back({"cus=" + std::to_string(k), c});
        }
    } else if (axis == "trough") {
        const int lo = min_v > 0 ? min_v : 2, hi = max_v > 0 ? max_v : 4;
        if (lo < 2 || hi > 4 || lo > hi) {
            std::fprintf(stderr, "ablate: trough axis wants 2 <= min <= max <= 4\n");
            return 1;
        }
        for (int d = lo; d <= hi; ++d) {
            TrainConfig c = base;
            c.depth = d;
            variants.push_back({"depth=" + std::to_string(d), c});
        }
    } else if (axis == "loss") {
        TrainConfig full = base, na = base, nb = base, seg = base;
        full.am_off = full.bc_off = false;
        na.am_off = true;
        na.bc_off = false;
        nb.bc_off = true;
        nb.am_off = false;
        seg.am_off = seg.bc_off = true;
        variants.push_back({"full", full});
        variants.push_back({"no-attn-loss", na});
        variants.push_back({"no-boundary-loss", nb});
        variants.push_back({"seg-only", seg});
    } else if (axis == "module") {
        TrainConfig full = base, noatt = base, scc = base, ca = base;
        full.cta_off = full.use_scc = full.use_ca = false;
        noatt.cta_off = true;
        scc.use_scc = true;
        ca.use_ca = true;
        variants.push_back({"full", full});
        variants.push_back({"no-attention", noatt});
        variants.push_back({"spatial-conv", scc});
        variants.push_back({"pixel-gate", ca});
    } else {
        std::fprintf(stderr, "ablate: unknown --axis '%s' (want cus|trough|loss|module)\n",
                     axis.c_str());
        return 1;
    }

    fs::create_directories(out_dir);
    DatasetManifest data;
    if (!data_path.empty()) {
        data = load_manifest(data_path);
    } else {
        GenDataArgs g;
        g.out = join(out_dir, "ablate_data");
        g.count = gen_count;
        g.seed = base.seed;
        g.sc.h = base.img_h;
        g.sc.w = base.img_w;
        data = write_dataset(g, nullptr);
    }

    struct Row {
        std::string label;
        MetricsRecord mr;
        double final_total = 0;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const std::string run_dir = join(out_dir, "run_" + axis + "_" + std::to_string(i));
        const TrainResult r = train(variants[i].cfg, data, run_dir);
        const LoadedCheckpoint lc = load_checkpoint(r.checkpoint_path);
        const MetricsRecord mr = evaluate(lc.model, lc.store, data);
        rows.push_back({variants[i].label, mr, r.epochs.back().total});
        std::fprintf(stderr, "ablate: %s done (iou %.4f)\n", variants[i].label.c_str(), mr.iou);
    }

    const std::string csv_path = join(out_dir, "ablate_" + axis + ".csv");
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "variant,iou,mae,ber,final_total\n";
    for (const Row& r : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f\n", r.label.c_str(), r.mr.iou,
                      r.mr.mae, r.mr.ber, r.final_total);
        csv << line;
    }
    csv.close();

    std::ostringstream md;
    md << "| variant | IoU | MAE | BER | final loss |\n";
    md << "| --- | --- | --- | --- | --- |\n";
    for (const Row& r : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "| %s | %.4f | %.4f | %.2f | %.4f |\n",
                      r.label.c_str(), r.mr.iou, r.mr.mae, r.mr.ber, r.final_total);
        md << line;
    }
    const std::string md_path = join(out_dir, "ablate_" + axis + ".md");
    std::ofstream mdf(md_path, std::ios::trunc);
    if (!mdf) throw std::runtime_error("cannot write " + md_path);
    mdf << md.str();
    mdf.close();
    std::printf("%s", md.str().c_str());
    std::printf("tables: %s, %s\n", csv_path.c_str(), md_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// prop1
// ---------------------------------------------------------------------------

int cmd_prop1(const Prop1Config& pc, std::uint64_t seed_base, int n_seeds,
              const std::string& out_csv) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(seed_base + static_cast<std::uint64_t>(i));
    const Prop1Report rep = prop1_probe(pc, seeds, out_csv);
    std::printf("seed,condition,initial_loss,final_loss\n");
    for (const Prop1Row& r : rep.rows)
        std::printf("%llu,%s,%.6f,%.6f\n", static_cast<unsigned long long>(r.seed),
                    r.condition.c_str(), r.initial_loss, r.final_loss);
    std::printf("mean final: spectral-input %.6f vs plain %.6f -> spectral <= plain: %s "
                "(advisory)\n",
                rep.mean_fft, rep.mean_plain, rep.fft_leq_plain ? "yes" : "no");
    if (!out_csv.empty()) std::printf("csv: %s\n", out_csv.c_str());
    return 0;
}

// Finds `--config PATH` / `--config=PATH` anywhere in the args so the file
// can seed the defaults before the real parse (CLI flags then override).
std::string find_config_arg(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
    }
    return "";
}

}  // namespace

std::vector<OpCheckResult> gradcheck_all_ops(std::uint64_t seed) {
    return run_battery("", seed);
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Desk-scale glass segmentation: synthetic data, training, evaluation, "
                 "prediction, gradient checks, ablation sweeps, and the spectral-input probe."};
    app.require_subcommand(1);

    // Seed TrainConfig from an optional config file before binding flags, so
    // precedence is CLI flag > config file > built-in default.
    TrainConfig cfg;
    const std::string cfg_path = find_config_arg(args);
    if (!cfg_path.empty()) {
        const std::string err = apply_config_file(cfg, cfg_path);
        if (!err.empty()) {
            std::fprintf(stderr, "error: %s\n", err.c_str());
            return 1;
        }
    }
    std::string config_echo;  // re-registered so the parser accepts the flag

    // gen-data
    GenDataArgs gen;
    CLI::App* sc_gen = app.add_subcommand("gen-data", "write a synthetic image/mask dataset");
    sc_gen->add_option("--out", gen.out, "output directory")->required();
    sc_gen->add_option("--count", gen.count, "number of samples");
    sc_gen->add_option("--seed", gen.seed, "base seed; sample i uses seed+i");
    sc_gen->add_option("--img-h", gen.sc.h, "image height");
    sc_gen->add_option("--img-w", gen.sc.w, "image width");
    sc_gen->add_option("--min-regions", gen.sc.min_regions, "min glass regions per scene");
    sc_gen->add_option("--max-regions", gen.sc.max_regions, "max glass regions per scene");
    sc_gen->add_option("--alpha-lo", gen.sc.alpha_lo, "min background transmission");
    sc_gen->add_option("--alpha-hi", gen.sc.alpha_hi, "max background transmission");
    sc_gen->add_option("--highlight-prob", gen.sc.highlight_prob, "reflection blob probability");
    sc_gen->add_option("--highlight-intensity", gen.sc.highlight_intensity,
                       "reflection blob strength");
    sc_gen->add_option("--noise-octaves", gen.sc.noise_octaves, "background noise octaves");
    sc_gen->add_option("--noise-cell", gen.sc.noise_cell, "background noise cell size");

    // train
    std::string train_data, train_out;
    CLI::App* sc_train = app.add_subcommand("train", "train a model on a manifest dataset");
    sc_train->add_option("--data", train_data, "manifest path")->required();
    sc_train->add_option("--out", train_out, "output directory")->required();
    sc_train->add_option("--config", config_echo, "key = value config file");
    add_train_flags(sc_train, cfg);

    // eval
    std::string eval_ckpt, eval_data, eval_csv, eval_pred;
    std::uint64_t eval_seed = 1;
    CLI::App* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    sc_eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    sc_eval->add_option("--data", eval_data, "manifest path")->required();
    sc_eval->add_option("--csv", eval_csv, "write per-sample metrics CSV here");
    sc_eval->add_option("--pred-dir", eval_pred, "write predicted masks here");
    sc_eval->add_option("--seed", eval_seed, "accepted for uniformity; evaluation is deterministic");

    // predict
    std::string pred_ckpt, pred_image, pred_out;
    std::uint64_t pred_seed = 1;
    CLI::App* sc_pred = app.add_subcommand("predict", "predict a mask for one image");
    sc_pred->add_option("--ckpt", pred_ckpt, "checkpoint path")->required();
    sc_pred->add_option("--image", pred_image, "input image (PNG/PPM/PGM)")->required();
    sc_pred->add_option("--out", pred_out, "output mask path")->required();
    sc_pred->add_option("--seed", pred_seed, "accepted for uniformity; prediction is deterministic");

    // gradcheck
    bool gc_all = false;
    std::string gc_op;
    std::uint64_t gc_seed = 1;
    CLI::App* sc_gc = app.add_subcommand("gradcheck", "finite-difference checks on every op");
    sc_gc->add_flag("--all", gc_all, "run the full battery (default)");
    sc_gc->add_option("--op", gc_op, "run only cases whose name contains this substring");
    sc_gc->add_option("--seed", gc_seed, "seed for the random test tensors");

    // ablate
    std::string ab_axis, ab_data, ab_out = ".";
    int ab_min = 0, ab_max = 0, ab_gen_count = 16;
    CLI::App* sc_ab = app.add_subcommand("ablate", "train/evaluate a sweep along one axis");
    sc_ab->add_option("--axis", ab_axis, "cus | trough | loss | module")->required();
    sc_ab->add_option("--min", ab_min, "sweep start (cus/trough axes)");
    sc_ab->add_option("--max", ab_max, "sweep end (cus/trough axes)");
    sc_ab->add_option("--data", ab_data, "manifest path (omitted: generate a small set)");
    sc_ab->add_option("--out", ab_out, "output directory for runs and tables");
    sc_ab->add_option("--gen-count", ab_gen_count, "generated samples when --data is omitted");
    sc_ab->add_option("--config", config_echo, "key = value config file");
    add_train_flags(sc_ab, cfg);

    // prop1
    Prop1Config pc;
    int p1_seeds = 5;
    std::uint64_t p1_base = 1;
    std::string p1_csv;
    CLI::App* sc_p1 = app.add_subcommand("prop1", "spectral-input convergence probe");
    sc_p1->add_option("--seeds", p1_seeds, "number of seeds (>= 3)");
    sc_p1->add_option("--seed", p1_base, "first seed; runs use seed..seed+seeds-1");
    sc_p1->add_option("--out", p1_csv, "write the per-run CSV here");
    sc_p1->add_option("--img-h", pc.h, "probe image height");
    sc_p1->add_option("--img-w", pc.w, "probe image width");
    sc_p1->add_option("--scenes", pc.n_scenes, "scenes per run");
    sc_p1->add_option("--width", pc.width, "hidden channels of the probe CNN");
    sc_p1->add_option("--steps", pc.steps, "full-batch SGD steps");
    sc_p1->add_option("--lr", pc.lr, "probe learning rate");
    sc_p1->add_option("--momentum", pc.momentum, "probe momentum");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (sc_gen->parsed()) return cmd_gen_data(gen);
        if (sc_train->parsed()) return cmd_train(cfg, train_data, train_out);
        if (sc_eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_csv, eval_pred);
        if (sc_pred->parsed()) return cmd_predict(pred_ckpt, pred_image, pred_out);
        if (sc_gc->parsed()) return cmd_gradcheck(gc_op, gc_seed);
        if (sc_ab->parsed())
            return cmd_ablate(ab_axis, ab_min, ab_max, cfg, ab_data, ab_out, ab_gen_count);
        if (sc_p1->parsed()) {
            if (p1_seeds < 3) {
                std::fprintf(stderr, "prop1: --seeds must be >= 3\n");
                return 1;
            }
            return cmd_prop1(pc, p1_base, p1_seeds, p1_csv);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;  // unreachable with require_subcommand(1)
}

}  // namespace fbwc
