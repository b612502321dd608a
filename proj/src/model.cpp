#include "fbwc/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fbwc/rng.hpp"

namespace fbwc {
namespace {

void need(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error(what);
}

bool is_pow2(int v) {
    return v >= 1 && (v & (v - 1)) == 0;
}

int ilog2(int v) {
    int k = 0;
    while ((1 << k) < v) ++k;
    return k;
}

// Projection half of one attention block: 1x1 conv then batchnorm.
Tensor cta_project(const Tensor& v, const ConvParam& proj, const BnParam& bn, Mode mode) {
    BatchNormState st = bn.state;  // copy shares the running-stat buffers
    return batchnorm(conv2d(v, proj.w, proj.b, 1, 0), bn.gamma, bn.beta, st, mode);
}

}  // namespace

void model_config_valid(const ModelConfig& cfg) {
    need(cfg.channels >= 1, "model config: channels must be >= 1");
    need(cfg.n_units >= 1, "model config: n_units must be >= 1");
    need(cfg.depth >= 2, "model config: depth must be >= 2");
    need(cfg.lambda >= 2 && is_pow2(cfg.lambda), "model config: lambda must be a power of two >= 2");
    need(cfg.in_h >= 1 && cfg.in_w >= 1, "model config: input size must be positive");
    const int unit_stride = cfg.lambda << (cfg.depth - 1);
    need(cfg.in_h % unit_stride == 0 && cfg.in_w % unit_stride == 0,
         "model config: input size must be divisible by lambda * 2^(depth-1)");
}

Tensor pretreat_stack(const Tensor& image, const std::vector<ConvParam>& stages) {
    need(!stages.empty(), "pretreat: at least one stage required");
    Tensor cur = image;
    for (const ConvParam& s : stages) {
        cur = maxpool2(conv2d(cur, s.w, s.b, 1, 1));
    }
    return cur;
}

std::pair<Tensor, Tensor> pretreat(const Tensor& image, const std::vector<ConvParam>& stages) {
    Tensor y = pretreat_stack(image, stages);
    return {y, y};
}

CuOut cu_forward(const Tensor& x, const CuParams& p) {
    need(!p.enc.empty() && p.enc.size() == p.dec.size(),
         "catcher unit: encoder/decoder transition counts must match and be >= 1");
    CuOut out;
    out.enc.push_back(x);
    Tensor cur = x;
    for (const ConvParam& e : p.enc) {
        cur = maxpool2(conv2d(cur, e.w, e.b, 1, 1));
        out.enc.push_back(cur);
    }
    out.trough = cur;
    Tensor de = cur;
    for (std::size_t j = 0; j < p.dec.size(); ++j) {
        const Tensor& skip = out.enc[out.enc.size() - 2 - j];
        Tensor up = bilinear_resize(de, skip.shape.h, skip.shape.w);
        de = conv2d(add(up, skip), p.dec[j].w, p.dec[j].b, 1, 1);
    }
    out.constraint = de;
    return out;
}

WccOut wcc_forward(const Tensor& x_cir, const std::vector<CuParams>& units) {
    need(!units.empty(), "catcher chain: at least one unit required");
    WccOut out;
    Tensor cur = x_cir;
    for (std::size_t i = 0; i < units.size(); ++i) {
        CuOut u = cu_forward(cur, units[i]);
        if (i == 0) out.first_unit_enc = u.enc;
        out.constraints.push_back(u.constraint);
        out.troughs.push_back(u.trough);
        out.boundary_logits.push_back(
            conv2d(u.constraint, units[i].boundary_head.w, units[i].boundary_head.b, 1, 0));
        cur = u.constraint;
    }
    return out;
}

Tensor cta_affinity(const Tensor& a, const Tensor& b, const CtaBlockParams& p, Mode mode) {
    need(a.shape == b.shape, "attention block: inputs must share a shape");
    need(p.s > scalar(0), "attention block: scale must be positive");
    const Shape s = a.shape;
    Tensor ap = cta_project(a, p.proj_a, p.bn_a, mode);
    Tensor bp = cta_project(b, p.proj_b, p.bn_b, mode);
    Tensor af = reshape(ap, Shape{s.n, 1, s.c, s.h * s.w});
    Tensor bf = reshape(bp, Shape{s.n, 1, s.c, s.h * s.w});
    return sigmoid(scale(matmul(bf, transpose(af)), p.s));
}

Tensor cta_block(const Tensor& a, const Tensor& b, const CtaBlockParams& p, Mode mode,
                 bool use_ca) {
    need(a.shape == b.shape, "attention block: inputs must share a shape");
    if (use_ca) {
        Tensor ap = cta_project(a, p.proj_a, p.bn_a, mode);
        Tensor bp = cta_project(b, p.proj_b, p.bn_b, mode);
        Tensor g = sigmoid(mul(ap, bp));
        return add(sub(a, mul(g, a)), mul(g, b));
    }
    const Shape s = a.shape;
    Tensor alpha = cta_affinity(a, b, p, mode);
    Tensor af = reshape(a, Shape{s.n, 1, s.c, s.h * s.w});
    Tensor bf = reshape(b, Shape{s.n, 1, s.c, s.h * s.w});
    Tensor mixed = add(sub(af, matmul(alpha, af)), matmul(alpha, bf));
    return reshape(mixed, s);
}

CtaOut cta_forward(const Tensor& x_tri, const Tensor& en1, const Tensor& en2,
                   const CtaParams& p, Mode mode, bool use_ca, bool bypass) {
    const Shape s = x_tri.shape;
    Tensor r1 = bilinear_resize(en1, s.h, s.w);
    Tensor r2 = bilinear_resize(en2, s.h, s.w);
    Tensor x1 = bypass ? x_tri : cta_block(x_tri, r1, p.block1, mode, use_ca);
    Tensor x2 = bypass ? x1 : cta_block(x1, r2, p.block2, mode, use_ca);
    CtaOut out;
    out.x_tri_out = x2;
    out.am_logits = conv2d(x2, p.am_head.w, p.am_head.b, 1, 0);
    return out;
}

Tensor branch_g2(const std::vector<Tensor>& troughs, const FccParams& p, int out_h, int out_w) {
    need(!troughs.empty() && troughs.size() == p.g2_proj.size(),
         "fusion g2: one projection per trough required");
    Tensor acc;
    for (std::size_t i = 0; i < troughs.size(); ++i) {
        Tensor e = p.use_scc ? conv2d(troughs[i], p.scc.w, p.scc.b, 1, 1)
                             : fourier_enhance(troughs[i], p.enhance.w, p.enhance.b);
        Tensor u = bilinear_resize(e, out_h, out_w);
        Tensor v = conv2d(u, p.g2_proj[i].w, p.g2_proj[i].b, 1, 0);
        acc = (i == 0) ? v : add(acc, v);
    }
    return acc;
}

Tensor fcc_forward(const Tensor& x_tri_out, const std::vector<Tensor>& troughs,
                   const std::vector<Tensor>& constraints, const FccParams& p) {
    need(constraints.size() == p.g3_proj.size() && !constraints.empty(),
         "fusion g3: one projection per constraint map required");
    Tensor w_map = conv2d(relu(conv2d(x_tri_out, p.g1_a.w, p.g1_a.b, 1, 0)), p.g1_b.w, p.g1_b.b,
                          1, 0);
    Tensor v_map = branch_g2(troughs, p, x_tri_out.shape.h, x_tri_out.shape.w);
    Tensor b_map;
    for (std::size_t i = 0; i < constraints.size(); ++i) {
        Tensor t = conv2d(constraints[i], p.g3_proj[i].w, p.g3_proj[i].b, 1, 0);
        b_map = (i == 0) ? t : add(b_map, t);
    }
    return add(mul(w_map, v_map), b_map);
}

Tensor seg_head(const Tensor& fused, const FccParams& p, int lambda) {
    need(lambda >= 1, "segmentation head: lambda must be >= 1");
    Tensor h = relu(conv2d(fused, p.head3.w, p.head3.b, 1, 1));
    Tensor l = conv2d(h, p.head1.w, p.head1.b, 1, 0);
    return bilinear_resize(l, fused.shape.h * lambda, fused.shape.w * lambda);
}

// ---------------------------------------------------------------------------
// Model wrapper
// ---------------------------------------------------------------------------

Tensor xavier_uniform(Shape s, std::mt19937_64& g) {
    const double fan_in = static_cast<double>(s.c) * s.h * s.w;
    const double fan_out = static_cast<double>(s.n) * s.h * s.w;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(s);
    for (index_t i = 0; i < t.numel(); ++i) {
        t.mut()[i] = static_cast<scalar>(rng_range(g, -limit, limit));
    }
    return t;
}

ConvParam FbwcModel::conv_view(const ParamStore& store, const PIdx& i) const {
    return ConvParam{store.param(i.w).value, store.param(i.b).value};
}

BnParam FbwcModel::bn_view(const ParamStore& store, const BnIdx& i) const {
    BnParam p;
    p.gamma = store.param(i.gamma).value;
    p.beta = store.param(i.beta).value;
    p.state.running_mean = store.buffers.at(static_cast<std::size_t>(i.rm)).value;
    p.state.running_var = store.buffers.at(static_cast<std::size_t>(i.rv)).value;
    return p;
}

FbwcModel FbwcModel::init(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
    model_config_valid(cfg);
    FbwcModel m;
    m.cfg = cfg;
    std::mt19937_64 g(seed);
    const int C = cfg.channels;

    auto add_conv = [&](const std::string& name, int co, int ci, int k) {
        PIdx idx;
        idx.w = store.add(name + ".w", xavier_uniform(Shape{co, ci, k, k}, g), true);
        idx.b = store.add(name + ".b", Tensor::zeros(Shape{1, co, 1, 1}), false);
        return idx;
    };
    auto add_bn = [&](const std::string& name, int c) {
        BnIdx idx;
        idx.gamma = store.add(name + ".gamma", Tensor::ones(Shape{1, c, 1, 1}), false);
        idx.beta = store.add(name + ".beta", Tensor::zeros(Shape{1, c, 1, 1}), false);
        idx.rm = store.add_buffer(name + ".rm", Tensor::zeros(Shape{1, c, 1, 1}));
        idx.rv = store.add_buffer(name + ".rv", Tensor::ones(Shape{1, c, 1, 1}));
        return idx;
    };

    const int stages = ilog2(cfg.lambda);
    for (int i = 0; i < stages; ++i) {
        m.pre_.push_back(add_conv("stem." + std::to_string(i), C, i == 0 ? 3 : C, 3));
    }

    for (int u = 0; u < cfg.n_units; ++u) {
        CuIdx cu;
        const std::string base = "wcc." + std::to_string(u);
        for (int j = 0; j < cfg.depth - 1; ++j) {
            cu.enc.push_back(add_conv(base + ".enc." + std::to_string(j), C, C, 3));
        }
        for (int j = 0; j < cfg.depth - 1; ++j) {
            cu.dec.push_back(add_conv(base + ".dec." + std::to_string(j), C, C, 3));
        }
        cu.bhead = add_conv(base + ".edge", 1, C, 1);
        m.units_.push_back(cu);
    }

    auto add_block = [&](const std::string& name) {
        CtaBlockIdx blk;
        blk.pa = add_conv(name + ".pa", C, C, 1);
        blk.bna = add_bn(name + ".bna", C);
        blk.pb = add_conv(name + ".pb", C, C, 1);
        blk.bnb = add_bn(name + ".bnb", C);
        return blk;
    };
    m.b1_ = add_block("cta.1");
    m.b2_ = add_block("cta.2");
    m.am_ = add_conv("cta.am", 1, C, 1);

    m.g1a_ = add_conv("fcc.g1a", C, C, 1);
    m.g1b_ = add_conv("fcc.g1b", C, C, 1);
    m.enh_ = add_conv("fcc.enhance", C, C, 1);
    m.scc_ = add_conv("fcc.scc", C, C, 3);
    for (int u = 0; u < cfg.n_units; ++u) {
        m.g2p_.push_back(add_conv("fcc.g2." + std::to_string(u), C, C, 1));
        m.g3p_.push_back(add_conv("fcc.g3." + std::to_string(u), C, C, 1));
    }
    m.h3_ = add_conv("fcc.head3", C, C, 3);
    m.h1_ = add_conv("fcc.head1", 1, C, 1);
    return m;
}

std::vector<ConvParam> FbwcModel::stem_params(const ParamStore& store) const {
    std::vector<ConvParam> out;
    for (const PIdx& i : pre_) out.push_back(conv_view(store, i));
    return out;
}

CuParams FbwcModel::unit_params(const ParamStore& store, int unit) const {
    const CuIdx& cu = units_.at(static_cast<std::size_t>(unit));
    CuParams p;
    for (const PIdx& i : cu.enc) p.enc.push_back(conv_view(store, i));
    for (const PIdx& i : cu.dec) p.dec.push_back(conv_view(store, i));
    p.boundary_head = conv_view(store, cu.bhead);
    return p;
}

std::vector<CuParams> FbwcModel::all_unit_params(const ParamStore& store) const {
    std::vector<CuParams> out;
    for (int u = 0; u < static_cast<int>(units_.size()); ++u) {
        out.push_back(unit_params(store, u));
    }
    return out;
}

CtaParams FbwcModel::cta_params(const ParamStore& store) const {
    const scalar s = scalar(1.0 / (static_cast<double>(cfg.in_h / cfg.lambda) *
                                   (cfg.in_w / cfg.lambda)));
    auto block = [&](const CtaBlockIdx& i) {
        CtaBlockParams p;
        p.proj_a = conv_view(store, i.pa);
        p.proj_b = conv_view(store, i.pb);
        p.bn_a = bn_view(store, i.bna);
        p.bn_b = bn_view(store, i.bnb);
        p.s = s;
        return p;
    };
    CtaParams p;
    p.block1 = block(b1_);
    p.block2 = block(b2_);
    p.am_head = conv_view(store, am_);
    return p;
}

FccParams FbwcModel::fcc_params(const ParamStore& store) const {
    FccParams p;
    p.g1_a = conv_view(store, g1a_);
    p.g1_b = conv_view(store, g1b_);
    p.enhance = conv_view(store, enh_);
    p.scc = conv_view(store, scc_);
    for (const PIdx& i : g2p_) p.g2_proj.push_back(conv_view(store, i));
    for (const PIdx& i : g3p_) p.g3_proj.push_back(conv_view(store, i));
    p.head3 = conv_view(store, h3_);
    p.head1 = conv_view(store, h1_);
    p.use_scc = cfg.use_scc;
    return p;
}

ModelOutputs FbwcModel::forward(const Tensor& image, const ParamStore& store, Mode mode) const {
    need(image.shape.c == 3 && image.shape.n >= 1, "model forward: image must be (n,3,h,w)");
    need(image.shape.h == cfg.in_h && image.shape.w == cfg.in_w,
         "model forward: image size must match the configured input size");
    auto [x_tri, x_cir] = pretreat(image, stem_params(store));
    WccOut wcc = wcc_forward(x_cir, all_unit_params(store));
    CtaOut cta = cta_forward(x_tri, wcc.first_unit_enc.at(0), wcc.first_unit_enc.at(1),
                             cta_params(store), mode, cfg.use_ca, cfg.cta_off);
    FccParams fcc = fcc_params(store);
    Tensor fused = fcc_forward(cta.x_tri_out, wcc.troughs, wcc.constraints, fcc);
    ModelOutputs out;
    out.seg_logits = seg_head(fused, fcc, cfg.lambda);
    out.am_logits = cta.am_logits;
    out.boundary_logits = wcc.boundary_logits;
    return out;
}

}  // namespace fbwc
