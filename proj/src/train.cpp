#include "fbwc/train.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fbwc/boundary.hpp"
#include "fbwc/fft.hpp"
#include "fbwc/image_io.hpp"
#include "fbwc/ops.hpp"
#include "fbwc/rng.hpp"

namespace fbwc {
namespace {

void need(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error(what);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void train_config_valid(const TrainConfig& cfg) {
    need(cfg.epochs >= 1, "train config: epochs must be >= 1");
    need(cfg.batch >= 1, "train config: batch must be >= 1");
    need(cfg.base_lr > 0, "train config: base_lr must be positive");
    need(cfg.momentum >= 0, "train config: momentum must be nonnegative");
    need(cfg.weight_decay >= 0, "train config: weight_decay must be nonnegative");
    need(cfg.poly_power > 0, "train config: poly_power must be positive");
    ModelConfig mc = to_model_config(cfg);
    model_config_valid(mc);
}

std::string train_config_to_text(const TrainConfig& c) {
    std::ostringstream out;
    out << "epochs = " << c.epochs << "\n";
    out << "batch = " << c.batch << "\n";
    out << "base_lr = " << fmt_double(c.base_lr) << "\n";
    out << "momentum = " << fmt_double(c.momentum) << "\n";
    out << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
    out << "poly_power = " << fmt_double(c.poly_power) << "\n";
    out << "n_units = " << c.n_units << "\n";
    out << "depth = " << c.depth << "\n";
    out << "lambda = " << c.lambda << "\n";
    out << "channels = " << c.channels << "\n";
    out << "img_h = " << c.img_h << "\n";
    out << "img_w = " << c.img_w << "\n";
    out << "seed = " << c.seed << "\n";
    out << "ckpt_every = " << c.ckpt_every << "\n";
    out << "am_off = " << (c.am_off ? 1 : 0) << "\n";
    out << "bc_off = " << (c.bc_off ? 1 : 0) << "\n";
    out << "cta_off = " << (c.cta_off ? 1 : 0) << "\n";
    out << "use_scc = " << (c.use_scc ? 1 : 0) << "\n";
    out << "use_ca = " << (c.use_ca ? 1 : 0) << "\n";
    return out.str();
}

namespace {

bool parse_kv_line(const std::string& line, std::string& key, std::string& value) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) return false;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const std::size_t a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const std::size_t b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    key = trim(line.substr(0, eq));
    value = trim(line.substr(eq + 1));
    return !key.empty();
}

}  // namespace

bool train_config_apply(TrainConfig& c, const std::string& key, const std::string& value) {
    auto to_i = [&](int& dst) { dst = std::stoi(value); };
    auto to_d = [&](double& dst) { dst = std::stod(value); };
    auto to_b = [&](bool& dst) { dst = std::stoi(value) != 0; };
    if (key == "epochs") to_i(c.epochs);
    else if (key == "batch") to_i(c.batch);
    else if (key == "base_lr") to_d(c.base_lr);
    else if (key == "momentum") to_d(c.momentum);
    else if (key == "weight_decay") to_d(c.weight_decay);
    else if (key == "poly_power") to_d(c.poly_power);
    else if (key == "n_units") to_i(c.n_units);
    else if (key == "depth") to_i(c.depth);
    else if (key == "lambda") to_i(c.lambda);
    else if (key == "channels") to_i(c.channels);
    else if (key == "img_h") to_i(c.img_h);
    else if (key == "img_w") to_i(c.img_w);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "ckpt_every") to_i(c.ckpt_every);
    else if (key == "am_off") to_b(c.am_off);
    else if (key == "bc_off") to_b(c.bc_off);
    else if (key == "cta_off") to_b(c.cta_off);
    else if (key == "use_scc") to_b(c.use_scc);
    else if (key == "use_ca") to_b(c.use_ca);
    else return false;
    return true;
}

TrainConfig train_config_from_text(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::string key, value;
        need(parse_kv_line(line, key, value), "train config: malformed line '" + line + "'");
        need(train_config_apply(c, key, value), "train config: unknown key '" + key + "'");
    }
    return c;
}

ModelConfig to_model_config(const TrainConfig& cfg) {
    ModelConfig mc;
    mc.channels = cfg.channels;
    mc.n_units = cfg.n_units;
    mc.depth = cfg.depth;
    mc.lambda = cfg.lambda;
    mc.in_h = cfg.img_h;
    mc.in_w = cfg.img_w;
    mc.cta_off = cfg.cta_off;
    mc.use_scc = cfg.use_scc;
    mc.use_ca = cfg.use_ca;
    return mc;
}

double poly_lr(std::int64_t iter, std::int64_t max_iter, double base_lr, double power) {
    need(max_iter >= 1, "poly_lr: max_iter must be >= 1");
    need(iter >= 0, "poly_lr: iter must be nonnegative");
    need(iter <= max_iter, "poly_lr: iter exceeds max_iter");
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
    return base_lr * std::pow(frac, power);
}

void sgd_step(ParamStore& store, const Tape& tape, double lr, double momentum,
              double weight_decay) {
    for (auto& p : store.params) {
        need(p.value.tracked(),
             "sgd step: parameter '" + p.name + "' is not attached to the tape");
        const std::vector<scalar> g = tape.grad_or_zeros(p.value);
        const scalar m = static_cast<scalar>(momentum);
        const scalar wd = p.decay ? static_cast<scalar>(weight_decay) : scalar(0);
        const scalar step = static_cast<scalar>(lr);
        scalar* val = p.value.mut();
        for (index_t i = 0; i < p.value.numel(); ++i) {
            const std::size_t u = static_cast<std::size_t>(i);
            p.velocity[u] = m * p.velocity[u] + g[u] + wd * val[i];
            val[i] -= step * p.velocity[u];
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
    if (pos + 4 > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(const std::string& buf, std::size_t& pos) {
    const std::uint32_t bits = get_u32(buf, pos);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void put_blob(std::string& out, const std::string& name, const Shape& s, const scalar* data,
              index_t count) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, 4);
    put_u32(out, static_cast<std::uint32_t>(s.n));
    put_u32(out, static_cast<std::uint32_t>(s.c));
    put_u32(out, static_cast<std::uint32_t>(s.h));
    put_u32(out, static_cast<std::uint32_t>(s.w));
    for (index_t i = 0; i < count; ++i) put_f32(out, static_cast<float>(data[i]));
}

std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& cfg, const ParamStore& store,
                     std::uint64_t iteration) {
    std::string out;
    out.append("FBWC");
    put_u32(out, 1);
    std::string cfg_text = train_config_to_text(cfg);
    cfg_text += "iteration = " + std::to_string(iteration) + "\n";
    put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
    out.append(cfg_text);
    for (const auto& p : store.params) {
        put_blob(out, p.name, p.value.shape, p.value.ptr(), p.value.numel());
        put_blob(out, p.name + ".v", p.value.shape, p.velocity.data(),
                 static_cast<index_t>(p.velocity.size()));
    }
    for (const auto& b : store.buffers) {
        put_blob(out, b.name, b.value.shape, b.value.ptr(), b.value.numel());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::string buf = read_binary_file(path);
    std::size_t pos = 0;
    if (buf.size() < 8 || buf.compare(0, 4, "FBWC") != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    pos = 4;
    const std::uint32_t version = get_u32(buf, pos);
    if (version != 1)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t cfg_len = get_u32(buf, pos);
    if (pos + cfg_len > buf.size()) throw std::runtime_error("checkpoint: truncated config");
    std::string cfg_text = buf.substr(pos, cfg_len);
    pos += cfg_len;

    // split off the iteration line; the rest is the plain config echo
    LoadedCheckpoint out;
    std::string cfg_only;
    {
        std::istringstream in(cfg_text);
        std::string line;
        bool have_iter = false;
        while (std::getline(in, line)) {
            std::string key, value;
            if (parse_kv_line(line, key, value) && key == "iteration") {
                out.iteration = std::stoull(value);
                have_iter = true;
            } else if (!line.empty()) {
                cfg_only += line + "\n";
            }
        }
        need(have_iter, "checkpoint: missing iteration counter");
    }
    out.cfg = train_config_from_text(cfg_only);
    out.model = FbwcModel::init(out.store, to_model_config(out.cfg), 0);

    std::size_t filled_params = 0, filled_vel = 0, filled_buffers = 0;
    while (pos < buf.size()) {
        const std::uint32_t name_len = get_u32(buf, pos);
        if (pos + name_len > buf.size()) throw std::runtime_error("checkpoint: truncated file");
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        const std::uint32_t rank = get_u32(buf, pos);
        if (rank != 4) throw std::runtime_error("checkpoint: unsupported rank for '" + name + "'");
        Shape s;
        s.n = static_cast<int>(get_u32(buf, pos));
        s.c = static_cast<int>(get_u32(buf, pos));
        s.h = static_cast<int>(get_u32(buf, pos));
        s.w = static_cast<int>(get_u32(buf, pos));
        const index_t count = s.numel();

        const bool is_velocity = name.size() > 2 && name.compare(name.size() - 2, 2, ".v") == 0;
        if (is_velocity) {
            const std::string base = name.substr(0, name.size() - 2);
            ParamStore::Param* p = out.store.find(base);
            if (!p) throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
            need(p->value.shape == s, "checkpoint: shape mismatch for '" + name + "'");
            for (index_t i = 0; i < count; ++i)
                p->velocity[static_cast<std::size_t>(i)] =
                    static_cast<scalar>(get_f32(buf, pos));
            ++filled_vel;
        } else if (ParamStore::Param* p = out.store.find(name)) {
            need(p->value.shape == s, "checkpoint: shape mismatch for '" + name + "'");
            for (index_t i = 0; i < count; ++i)
                p->value.mut()[i] = static_cast<scalar>(get_f32(buf, pos));
            ++filled_params;
        } else if (ParamStore::Buffer* b = out.store.find_buffer(name)) {
            need(b->value.shape == s, "checkpoint: shape mismatch for '" + name + "'");
            for (index_t i = 0; i < count; ++i)
                b->value.mut()[i] = static_cast<scalar>(get_f32(buf, pos));
            ++filled_buffers;
        } else {
            throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
        }
    }
    need(filled_params == out.store.params.size(), "checkpoint: missing parameter blobs");
    need(filled_vel == out.store.params.size(), "checkpoint: missing momentum blobs");
    need(filled_buffers == out.store.buffers.size(), "checkpoint: missing state blobs");
    return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

// Copies sample i of a batch list into the stacked tensor.
void stack_into(Tensor& dst, int i, const Tensor& src) {
    const index_t plane = src.numel();
    std::memcpy(dst.mut() + static_cast<index_t>(i) * plane, src.ptr(),
                static_cast<std::size_t>(plane) * sizeof(scalar));
}

std::string join(const std::string& dir, const std::string& leaf) {
    return (std::filesystem::path(dir) / leaf).string();
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetManifest& data,
                  const std::string& out_dir) {
    train_config_valid(cfg);
    need(!data.pairs.empty(), "train: dataset is empty");
    std::filesystem::create_directories(out_dir);

    ParamStore store;
    FbwcModel model = FbwcModel::init(store, to_model_config(cfg), cfg.seed);
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);

    const int n = static_cast<int>(data.pairs.size());
    const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const std::int64_t max_iter = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
    const int bh = cfg.img_h / cfg.lambda, bw = cfg.img_w / cfg.lambda;

    std::vector<SamplePair> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < data.pairs.size(); ++i) samples.push_back(load_sample(data, i));

    TrainResult result;
    result.log_path = join(out_dir, "train_log.csv");
    result.checkpoint_path = join(out_dir, "checkpoint.fbwc");
    std::ofstream log(result.log_path, std::ios::trunc);
    need(static_cast<bool>(log), "train: cannot write log '" + result.log_path + "'");
    log << "epoch,iter,lr,l_seg,l_am,l_bc_mean,total\n";

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    std::int64_t iter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng_shuffle(rng, order);
        double sum_seg = 0, sum_am = 0, sum_bc = 0, sum_total = 0;
        double last_lr = 0;
        for (int start = 0; start < n; start += cfg.batch) {
            const int bsz = std::min(cfg.batch, n - start);
            Tensor images(Shape{bsz, 3, cfg.img_h, cfg.img_w});
            Tensor gts(Shape{bsz, 1, cfg.img_h, cfg.img_w});
            Tensor btargets(Shape{bsz, 1, bh, bw});
            for (int b = 0; b < bsz; ++b) {
                const SamplePair& raw =
                    samples[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
                SamplePair aug = augment(raw, rng, cfg.img_h, cfg.img_w);
                stack_into(images, b, aug.image);
                stack_into(gts, b, aug.mask);
                stack_into(btargets, b, boundary_target(aug.mask, cfg.lambda));
            }

            Tape tape;
            store.attach(tape);
            ModelOutputs out = model.forward(images, store, Mode::train);

            auto abort_nan = [&](const std::string& tensor_name) {
                throw std::runtime_error("train: non-finite values in " + tensor_name +
                                         " at iteration " + std::to_string(iter));
            };
            if (!out.seg_logits.all_finite()) abort_nan("seg_logits");
            if (!out.am_logits.all_finite()) abort_nan("am_logits");
            for (std::size_t u = 0; u < out.boundary_logits.size(); ++u) {
                if (!out.boundary_logits[u].all_finite())
                    abort_nan("boundary_logits[" + std::to_string(u) + "]");
            }

            Tensor l_seg = ohem_ce(out.seg_logits, gts);
            if (!l_seg.all_finite()) abort_nan("l_seg");
            Tensor total = l_seg;
            scalar am_val = 0;
            if (!cfg.am_off) {
                Tensor l_am = ohem_ce(bilinear_resize(out.am_logits, cfg.img_h, cfg.img_w), gts);
                if (!l_am.all_finite()) abort_nan("l_am");
                am_val = l_am.item();
                total = add(total, l_am);
            }
            std::vector<scalar> bc_vals(out.boundary_logits.size(), scalar(0));
            if (!cfg.bc_off) {
                bc_vals.clear();
                Tensor bc_sum;
                for (std::size_t u = 0; u < out.boundary_logits.size(); ++u) {
                    Tensor t = bce_logits(out.boundary_logits[u], btargets);
                    if (!t.all_finite()) abort_nan("l_bc[" + std::to_string(u) + "]");
                    bc_vals.push_back(t.item());
                    bc_sum = (u == 0) ? t : add(bc_sum, t);
                }
                total = add(total, scale(bc_sum, 1.0 / static_cast<double>(
                                                     out.boundary_logits.size())));
            }
            if (!total.all_finite()) abort_nan("total");

            tape.backward(total);
            last_lr = poly_lr(iter, max_iter, cfg.base_lr, cfg.poly_power);
            sgd_step(store, tape, last_lr, cfg.momentum, cfg.weight_decay);
            store.detach();
            ++iter;

            LossBreakdown lb = total_loss(l_seg.item(), am_val, bc_vals, cfg.am_off, cfg.bc_off);
            sum_seg += lb.l_seg;
            sum_am += lb.l_am;
            double bc_mean = 0;
            for (scalar v : lb.bc_losses) bc_mean += static_cast<double>(v);
            if (!lb.bc_losses.empty()) bc_mean /= static_cast<double>(lb.bc_losses.size());
            sum_bc += bc_mean;
            sum_total += lb.total;
        }

        EpochLog el;
        el.epoch = epoch + 1;
        el.iter = iter;
        el.lr = last_lr;
        el.l_seg = sum_seg / steps_per_epoch;
        el.l_am = sum_am / steps_per_epoch;
        el.l_bc_mean = sum_bc / steps_per_epoch;
        el.total = sum_total / steps_per_epoch;
        result.epochs.push_back(el);
        char row[256];
        std::snprintf(row, sizeof(row), "%d,%" PRId64 ",%.8g,%.6f,%.6f,%.6f,%.6f\n", el.epoch,
                      el.iter, el.lr, el.l_seg, el.l_am, el.l_bc_mean, el.total);
        log << row;
        log.flush();

        if (cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0 && epoch + 1 < cfg.epochs) {
            save_checkpoint(join(out_dir, "checkpoint-e" + std::to_string(epoch + 1) + ".fbwc"),
                            cfg, store, static_cast<std::uint64_t>(iter));
        }
    }
    save_checkpoint(result.checkpoint_path, cfg, store, static_cast<std::uint64_t>(iter));
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

MetricsRecord evaluate(const FbwcModel& model, const ParamStore& store,
                       const DatasetManifest& data, const std::string& per_sample_csv,
                       const std::string& pred_dir) {
    need(!data.pairs.empty(), "evaluate: dataset is empty");
    std::ofstream csv;
    if (!per_sample_csv.empty()) {
        csv.open(per_sample_csv, std::ios::trunc);
        need(static_cast<bool>(csv), "evaluate: cannot write '" + per_sample_csv + "'");
        csv << "index,image,iou,mae,ber\n";
    }
    if (!pred_dir.empty()) std::filesystem::create_directories(pred_dir);

    double mae_sum = 0;
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < data.pairs.size(); ++i) {
        SamplePair s = load_sample(data, i);
        need(s.image.shape.h == model.cfg.in_h && s.image.shape.w == model.cfg.in_w,
             "evaluate: sample size " + s.image.shape.str() +
                 " is incompatible with the checkpoint's input size");
        ModelOutputs out = model.forward(s.image, store, Mode::eval);
        Tensor probs = sigmoid(out.seg_logits);
        MetricsRecord mr = metrics(probs, s.mask);
        mae_sum += mr.mae;
        Tensor hard(probs.shape);
        for (index_t j = 0; j < probs.numel(); ++j) {
            const bool pred = probs.ptr()[j] >= scalar(0.5);
            const bool truth = s.mask.ptr()[j] != scalar(0);
            hard.mut()[j] = pred ? scalar(1) : scalar(0);
            if (pred && truth) ++tp;
            else if (pred && !truth) ++fp;
            else if (!pred && truth) ++fn;
            else ++tn;
        }
        if (csv.is_open()) {
            char row[512];
            std::snprintf(row, sizeof(row), "%zu,%s,%.6f,%.6f,%.6f\n", i,
                          data.pairs[i].first.c_str(), mr.iou, mr.mae, mr.ber);
            csv << row;
        }
        if (!pred_dir.empty()) {
            save_mask(join(pred_dir, "pred_" + std::to_string(i) + ".png"), hard);
        }
    }

    MetricsRecord out;
    out.mae = mae_sum / static_cast<double>(data.pairs.size());
    const long long np = tp + fn, nn = tn + fp;
    out.iou = (np + fp == 0) ? 1.0
                             : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    const double acc_p = np > 0 ? static_cast<double>(tp) / static_cast<double>(np)
                                : (fp == 0 ? 1.0 : 0.0);
    const double acc_n = nn > 0 ? static_cast<double>(tn) / static_cast<double>(nn)
                                : (fn == 0 ? 1.0 : 0.0);
    out.ber = 100.0 * (1.0 - 0.5 * (acc_p + acc_n));
    return out;
}

// ---------------------------------------------------------------------------
// Spectral-input probe
// ---------------------------------------------------------------------------

Prop1Report prop1_probe(const Prop1Config& pc, const std::vector<std::uint64_t>& seeds,
                        const std::string& out_csv) {
    need(seeds.size() >= 3, "spectral probe: at least 3 seeds required");
    need(pc.h >= 8 && pc.w >= 8, "spectral probe: images must be at least 8x8");
    need(pc.n_scenes >= 1 && pc.width >= 1 && pc.steps >= 1,
         "spectral probe: scene count, width, and steps must be positive");

    Prop1Report report;
    double sum_plain = 0, sum_fft = 0;
    for (std::uint64_t seed : seeds) {
        // shared task for the pair: scenes drawn from this seed
        SceneConfig sc;
        sc.h = pc.h;
        sc.w = pc.w;
        Tensor x_plain(Shape{pc.n_scenes, 3, pc.h, pc.w});
        Tensor target(Shape{pc.n_scenes, 1, pc.h, pc.w});
        for (int i = 0; i < pc.n_scenes; ++i) {
            SamplePair s = gen_synthetic(sc, seed * 1000 + static_cast<std::uint64_t>(i));
            std::memcpy(x_plain.mut() + static_cast<index_t>(i) * s.image.numel(), s.image.ptr(),
                        static_cast<std::size_t>(s.image.numel()) * sizeof(scalar));
            std::memcpy(target.mut() + static_cast<index_t>(i) * s.mask.numel(), s.mask.ptr(),
                        static_cast<std::size_t>(s.mask.numel()) * sizeof(scalar));
        }
        Tensor x_fft =
            add(x_plain, scale(real_fft_map(x_plain), 1.0 / (static_cast<double>(pc.h) * pc.w)));

        // one weight draw per seed; both conditions start from clones of it
        std::mt19937_64 g(seed);
        Tensor w1 = xavier_uniform(Shape{pc.width, 3, 3, 3}, g);
        Tensor w2 = xavier_uniform(Shape{pc.width, pc.width, 3, 3}, g);
        Tensor w3 = xavier_uniform(Shape{1, pc.width, 3, 3}, g);

        auto run_condition = [&](const Tensor& x, const char* condition) {
            ParamStore ps;
            ps.add("c1.w", w1.clone(), true);
            ps.add("c1.b", Tensor::zeros(Shape{1, pc.width, 1, 1}), false);
            ps.add("c2.w", w2.clone(), true);
            ps.add("c2.b", Tensor::zeros(Shape{1, pc.width, 1, 1}), false);
            ps.add("c3.w", w3.clone(), true);
            ps.add("c3.b", Tensor::zeros(Shape{1, 1, 1, 1}), false);
            Prop1Row row;
            row.seed = seed;
            row.condition = condition;
            for (int step = 0; step < pc.steps; ++step) {
                Tape tape;
                ps.attach(tape);
                Tensor h1 = relu(conv2d(x, ps.params[0].value, ps.params[1].value, 1, 1));
                Tensor h2 = relu(conv2d(h1, ps.params[2].value, ps.params[3].value, 1, 1));
                Tensor logits = conv2d(h2, ps.params[4].value, ps.params[5].value, 1, 1);
                Tensor loss = bce_logits(logits, target);
                need(loss.all_finite(), "spectral probe: non-finite loss");
                const double lv = static_cast<double>(loss.item());
                if (step == 0) row.initial_loss = lv;
                row.final_loss = lv;
                tape.backward(loss);
                sgd_step(ps, tape, pc.lr, pc.momentum, 0.0);
                ps.detach();
            }
            return row;
        };
        Prop1Row plain = run_condition(x_plain, "plain");
        Prop1Row spectral = run_condition(x_fft, "fft");
        sum_plain += plain.final_loss;
        sum_fft += spectral.final_loss;
        report.rows.push_back(plain);
        report.rows.push_back(spectral);
    }
    report.mean_plain = sum_plain / static_cast<double>(seeds.size());
    report.mean_fft = sum_fft / static_cast<double>(seeds.size());
    report.fft_leq_plain = report.mean_fft <= report.mean_plain;

    if (!out_csv.empty()) {
        std::ofstream csv(out_csv, std::ios::trunc);
        need(static_cast<bool>(csv), "spectral probe: cannot write '" + out_csv + "'");
        csv << "seed,condition,initial_loss,final_loss\n";
        for (const Prop1Row& r : report.rows) {
            char row[256];
            std::snprintf(row, sizeof(row), "%" PRIu64 ",%s,%.6f,%.6f\n", r.seed,
                          r.condition.c_str(), r.initial_loss, r.final_loss);
            csv << row;
        }
        char mean_row[256];
        std::snprintf(mean_row, sizeof(mean_row), "mean,plain,,%.6f\nmean,fft,,%.6f\n",
                      report.mean_plain, report.mean_fft);
        csv << mean_row;
    }
    return report;
}

}  // namespace fbwc
