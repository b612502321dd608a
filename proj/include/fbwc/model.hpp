#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fbwc/fft.hpp"
#include "fbwc/ops.hpp"
#include "fbwc/tensor.hpp"

namespace fbwc {

// Architecture hyper-parameters. The network is a downsampling stem feeding
// two branches: a serial chain of encoder/decoder "catcher" units on one copy
// of the stem output, and an attention detail branch on the other copy. A
// fusion stage combines both with spectrally enhanced deep features before a
// small head predicts full-resolution segmentation logits.
struct ModelConfig {
    int channels = 16;  // working channel width after the stem
    int n_units = 4;    // number of serially chained catcher units
    int depth = 3;      // encoder levels per unit (level 1 is the unit input)
    int lambda = 4;     // stem downsampling factor (power of two, >= 2)
    int in_h = 64;      // expected input height
    int in_w = 64;      // expected input width
    bool cta_off = false;  // bypass the attention blocks (detail branch = stem copy)
    bool use_ca = false;   // per-pixel gating instead of channel-affinity mixing
    bool use_scc = false;  // 3x3 spatial conv instead of spectral enhancement in g2
};

// Throws std::runtime_error on an unusable configuration.
void model_config_valid(const ModelConfig& cfg);

// Uniform init on [-limit, limit] with limit = sqrt(6 / (fan_in + fan_out)),
// where fan_in = c*h*w and fan_out = n*h*w of the requested shape.
Tensor xavier_uniform(Shape s, std::mt19937_64& g);

// View of one convolution's parameters. Tensor copies share storage and tape
// ids, so these structs are cheap views over ParamStore-owned values.
struct ConvParam {
    Tensor w;
    Tensor b;
};

// View of one batchnorm layer (learnables + running statistics).
struct BnParam {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
};

// One catcher unit: depth-1 encoder transitions (3x3 conv then 2x2 maxpool),
// depth-1 decoder refinements (x2 upsample, add the matching encoder level,
// 3x3 conv), and a 1x1 head emitting single-channel boundary logits from the
// finest decoder level. All convs keep the channel width constant.
struct CuParams {
    std::vector<ConvParam> enc;
    std::vector<ConvParam> dec;
    ConvParam boundary_head;
};

// One attention mixing block. Both inputs are projected by a 1x1 conv plus
// batchnorm; the gate is a per-image channel-affinity matrix
//   alpha = sigmoid(s * Bp * Ap^T)   (C x C, Ap/Bp flattened to C x h*w)
// and the output re-mixes the RAW inputs: a - alpha*a + alpha*b. The scale s
// (> 0) keeps Gram entries in sigmoid's responsive range; 1/(h*w) is the
// intended value. With `use_ca` the gate is instead per-pixel:
// sigmoid(Ap .* Bp), mixing elementwise.
struct CtaBlockParams {
    ConvParam proj_a;
    ConvParam proj_b;
    BnParam bn_a;
    BnParam bn_b;
    scalar s = scalar(0);
};

// Detail branch: two chained mixing blocks plus a 1x1 head for the
// single-channel attention-map logits.
struct CtaParams {
    CtaBlockParams block1;
    CtaBlockParams block2;
    ConvParam am_head;
};

// Fusion + head parameters. g1 (1x1 conv -> relu -> 1x1 conv) produces the
// weight map W from the detail branch. g2 enhances each unit's deepest
// encoder level (shared spectral projection, or `scc` 3x3 conv when use_scc),
// upsamples, applies a per-unit 1x1 conv, and sums into V. g3 applies a
// per-unit 1x1 conv to each unit's finest decoder level and sums into B. The
// fused map is W .* V + B; the head is 3x3 conv -> relu -> 1x1 conv -> x lambda
// bilinear upsample, returning raw logits.
struct FccParams {
    ConvParam g1_a;
    ConvParam g1_b;
    ConvParam enhance;
    ConvParam scc;
    std::vector<ConvParam> g2_proj;
    std::vector<ConvParam> g3_proj;
    ConvParam head3;
    ConvParam head1;
    bool use_scc = false;
};

// Stem: [3x3 conv -> 2x2 maxpool] per stage (no activation). Stage count is
// log2(lambda); the first conv maps 3 -> C, later ones C -> C.
Tensor pretreat_stack(const Tensor& image, const std::vector<ConvParam>& stages);

// Runs the stem once and returns the result twice (shared tensor): first the
// detail-branch copy, then the catcher-chain copy.
std::pair<Tensor, Tensor> pretreat(const Tensor& image, const std::vector<ConvParam>& stages);

struct CuOut {
    std::vector<Tensor> enc;  // encoder levels 1..depth; enc[0] is the input
    Tensor trough;            // deepest encoder level (== enc.back())
    Tensor constraint;        // finest decoder level, same size as the input
};

CuOut cu_forward(const Tensor& x, const CuParams& p);

struct WccOut {
    std::vector<Tensor> constraints;      // per-unit finest decoder levels
    std::vector<Tensor> troughs;          // per-unit deepest encoder levels
    std::vector<Tensor> boundary_logits;  // per-unit 1x1 head outputs (n,1,h,w)
    std::vector<Tensor> first_unit_enc;   // encoder levels of the leading unit
};

// Serial chain: unit i consumes the previous unit's constraint output (the
// first consumes x_cir). Boundary logits come from each constraint output.
WccOut wcc_forward(const Tensor& x_cir, const std::vector<CuParams>& units);

// Channel-affinity gate alpha for the pair (a, b): (n,1,C,C). Exposed for
// testing the gate's range and transpose duality.
Tensor cta_affinity(const Tensor& a, const Tensor& b, const CtaBlockParams& p, Mode mode);

Tensor cta_block(const Tensor& a, const Tensor& b, const CtaBlockParams& p, Mode mode,
                 bool use_ca = false);

struct CtaOut {
    Tensor x_tri_out;  // refined detail features, same shape as x_tri
    Tensor am_logits;  // (n,1,h,w) attention-map logits
};

// Resizes the two encoder features to x_tri's spatial size, chains two mixing
// blocks (x_tri with level 1, then the result with level 2), and applies the
// attention-map head. With `bypass` the blocks are skipped (x_tri passes
// through) but the head still runs.
CtaOut cta_forward(const Tensor& x_tri, const Tensor& en1, const Tensor& en2,
                   const CtaParams& p, Mode mode, bool use_ca = false, bool bypass = false);

// V: per-unit enhanced troughs, upsampled to (out_h, out_w), projected by the
// per-unit 1x1 convs, summed.
Tensor branch_g2(const std::vector<Tensor>& troughs, const FccParams& p, int out_h, int out_w);

// W .* V + B as described on FccParams.
Tensor fcc_forward(const Tensor& x_tri_out, const std::vector<Tensor>& troughs,
                   const std::vector<Tensor>& constraints, const FccParams& p);

// 3x3 conv -> relu -> 1x1 conv -> bilinear upsample by `lambda`. Raw logits.
Tensor seg_head(const Tensor& fused, const FccParams& p, int lambda);

struct ModelOutputs {
    Tensor seg_logits;                    // (n,1,H,W)
    Tensor am_logits;                     // (n,1,H/lambda,W/lambda)
    std::vector<Tensor> boundary_logits;  // per unit, (n,1,H/lambda,W/lambda)
};

// Owns nothing but indices: parameters live in a ParamStore so training,
// checkpointing, and weight decay see one flat list. `init` registers every
// parameter (insertion order is the checkpoint order) with deterministic
// Xavier-uniform weights drawn from `seed`; biases start at zero, batchnorm
// at identity. Forward materializes parameter views from the store on each
// call so tensors carry the tape ids assigned by ParamStore::attach.
class FbwcModel {
public:
    static FbwcModel init(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

    ModelOutputs forward(const Tensor& image, const ParamStore& store, Mode mode) const;

    // Parameter-view builders, public for targeted tests and probes.
    std::vector<ConvParam> stem_params(const ParamStore& store) const;
    CuParams unit_params(const ParamStore& store, int unit) const;
    std::vector<CuParams> all_unit_params(const ParamStore& store) const;
    CtaParams cta_params(const ParamStore& store) const;
    FccParams fcc_params(const ParamStore& store) const;

    ModelConfig cfg;

private:
    struct PIdx {
        int w = -1;
        int b = -1;
    };
    struct BnIdx {
        int gamma = -1;
        int beta = -1;
        int rm = -1;  // buffer index
        int rv = -1;  // buffer index
    };
    struct CuIdx {
        std::vector<PIdx> enc;
        std::vector<PIdx> dec;
        PIdx bhead;
    };
    struct CtaBlockIdx {
        PIdx pa;
        PIdx pb;
        BnIdx bna;
        BnIdx bnb;
    };

    std::vector<PIdx> pre_;
    std::vector<CuIdx> units_;
    CtaBlockIdx b1_, b2_;
    PIdx am_;
    PIdx g1a_, g1b_, enh_, scc_;
    std::vector<PIdx> g2p_, g3p_;
    PIdx h3_, h1_;

    ConvParam conv_view(const ParamStore& store, const PIdx& i) const;
    BnParam bn_view(const ParamStore& store, const BnIdx& i) const;
};

}  // namespace fbwc
