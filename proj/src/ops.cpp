#include "fbwc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace fbwc {

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t || !t->tracked()) continue;
        if (!tape)
            tape = t->tape;
        else if (tape != t->tape)
            throw std::runtime_error("op: inputs are tracked on different tapes");
    }
    return tape;
}

int nid(const Tensor& t) { return t.tracked() ? t.node : -1; }

// Zero-pads every (n,c) plane by p on each side.
std::vector<scalar> pad_planes(const scalar* x, int n, int c, int h, int w, int p) {
    const int hp = h + 2 * p, wp = w + 2 * p;
    std::vector<scalar> out(static_cast<std::size_t>(n) * c * hp * wp, scalar(0));
    for (index_t img = 0; img < static_cast<index_t>(n) * c; ++img) {
        const scalar* src = x + img * h * w;
        scalar* dst = out.data() + img * hp * wp + static_cast<index_t>(p) * wp + p;
        for (int y = 0; y < h; ++y)
            std::memcpy(dst + static_cast<index_t>(y) * wp, src + static_cast<index_t>(y) * w,
                        sizeof(scalar) * static_cast<std::size_t>(w));
    }
    return out;
}

struct LerpAxis {
    std::vector<int> lo, hi;
    std::vector<scalar> frac;
};

// Half-pixel source coordinates, clamped to the edge.
LerpAxis make_lerp(int in, int out) {
    LerpAxis ax;
    ax.lo.resize(static_cast<std::size_t>(out));
    ax.hi.resize(static_cast<std::size_t>(out));
    ax.frac.resize(static_cast<std::size_t>(out));
    const double sc = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * sc - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
        const int lo = static_cast<int>(std::floor(src));
        ax.lo[static_cast<std::size_t>(i)] = lo;
        ax.hi[static_cast<std::size_t>(i)] = std::min(lo + 1, in - 1);
        ax.frac[static_cast<std::size_t>(i)] = static_cast<scalar>(src - lo);
    }
    return ax;
}

scalar stable_sigmoid(scalar z) {
    if (z >= 0) return scalar(1) / (scalar(1) + std::exp(-z));
    const scalar e = std::exp(z);
    return e / (scalar(1) + e);
}

}  // namespace

BatchNormState BatchNormState::make(int channels) {
    BatchNormState s;
    s.running_mean = Tensor::zeros({1, channels, 1, 1});
    s.running_var = Tensor::ones({1, channels, 1, 1});
    return s;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
    const Shape xs = input.shape, ks = kernel.shape;
    if (stride < 1) throw std::runtime_error("conv2d: stride must be >= 1");
    if (padding < 0) throw std::runtime_error("conv2d: padding must be >= 0");
    if (xs.c != ks.c)
        throw std::runtime_error("conv2d: input channels mismatch, input " + xs.str() +
                                 " vs kernel " + ks.str());
    const int co = ks.n, ci = ks.c, kh = ks.h, kw = ks.w;
    if (bias.numel() != co)
        throw std::runtime_error("conv2d: bias size " + std::to_string(bias.numel()) +
                                 " does not match output channels " + std::to_string(co));
    const int hp = xs.h + 2 * padding, wp = xs.w + 2 * padding;
    if (hp < kh || wp < kw)
        throw std::runtime_error("conv2d: kernel " + ks.str() + " larger than padded input " + xs.str());
    const int ho = (hp - kh) / stride + 1;
    const int wo = (wp - kw) / stride + 1;

    Tensor out({xs.n, co, ho, wo});
    {
        std::vector<scalar> padded;
        const scalar* xbase = input.ptr();
        int ph = xs.h, pw = xs.w;
        if (padding > 0) {
            padded = pad_planes(input.ptr(), xs.n, ci, xs.h, xs.w, padding);
            xbase = padded.data();
            ph = hp;
            pw = wp;
        }
        const scalar* kd = kernel.ptr();
        const scalar* bd = bias.ptr();
        scalar* od = out.mut();
        for (int n = 0; n < xs.n; ++n) {
            for (int oc = 0; oc < co; ++oc) {
                scalar* oplane = od + ((static_cast<index_t>(n) * co + oc) * ho) * wo;
                std::fill(oplane, oplane + static_cast<index_t>(ho) * wo, bd[oc]);
                for (int ic = 0; ic < ci; ++ic) {
                    const scalar* xplane = xbase + ((static_cast<index_t>(n) * ci + ic) * ph) * pw;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const scalar wv = kd[(((static_cast<index_t>(oc) * ci + ic) * kh + ky) * kw + kx)];
                            if (wv == scalar(0)) continue;
                            for (int oy = 0; oy < ho; ++oy) {
                                const scalar* xrow = xplane + (static_cast<index_t>(oy) * stride + ky) * pw + kx;
                                scalar* orow = oplane + static_cast<index_t>(oy) * wo;
                                if (stride == 1) {
                                    for (int ox = 0; ox < wo; ++ox) orow[ox] += wv * xrow[ox];
                                } else {
                                    for (int ox = 0; ox < wo; ++ox) orow[ox] += wv * xrow[static_cast<index_t>(ox) * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Tape* tape = common_tape({&input, &kernel, &bias});
    if (!tape) return out;
    const int xi = nid(input), ki = nid(kernel), bi = nid(bias);
    auto xd = input.data;
    auto kd = kernel.data;
    return tape->record(std::move(out), {xi, ki, bi},
        [=](Tape& t, const std::vector<scalar>& go) {
            const int ph = xs.h + 2 * padding, pw = xs.w + 2 * padding;
            std::vector<scalar> padded;
            const scalar* xbase = xd->data();
            if (padding > 0) {
                padded = pad_planes(xd->data(), xs.n, ci, xs.h, xs.w, padding);
                xbase = padded.data();
            }
            if (xi >= 0) {
                std::vector<scalar> dxp(static_cast<std::size_t>(xs.n) * ci * ph * pw, scalar(0));
                for (int n = 0; n < xs.n; ++n) {
                    for (int oc = 0; oc < co; ++oc) {
                        const scalar* gplane = go.data() + ((static_cast<index_t>(n) * co + oc) * ho) * wo;
                        for (int ic = 0; ic < ci; ++ic) {
                            scalar* dxplane = dxp.data() + ((static_cast<index_t>(n) * ci + ic) * ph) * pw;
                            for (int ky = 0; ky < kh; ++ky) {
                                for (int kx = 0; kx < kw; ++kx) {
                                    const scalar wv = (*kd)[(((static_cast<index_t>(oc) * ci + ic) * kh + ky) * kw + kx)];
                                    if (wv == scalar(0)) continue;
                                    for (int oy = 0; oy < ho; ++oy) {
                                        scalar* dxrow = dxplane + (static_cast<index_t>(oy) * stride + ky) * pw + kx;
                                        const scalar* grow = gplane + static_cast<index_t>(oy) * wo;
                                        if (stride == 1) {
                                            for (int ox = 0; ox < wo; ++ox) dxrow[ox] += wv * grow[ox];
                                        } else {
                                            for (int ox = 0; ox < wo; ++ox) dxrow[static_cast<index_t>(ox) * stride] += wv * grow[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                auto& gx = t.grad_buf(xi);
                for (index_t img = 0; img < static_cast<index_t>(xs.n) * ci; ++img) {
                    const scalar* src = dxp.data() + img * ph * pw + static_cast<index_t>(padding) * pw + padding;
                    scalar* dst = gx.data() + img * xs.h * xs.w;
                    for (int y = 0; y < xs.h; ++y)
                        for (int x = 0; x < xs.w; ++x)
                            dst[static_cast<index_t>(y) * xs.w + x] += src[static_cast<index_t>(y) * pw + x];
                }
            }
            if (ki >= 0) {
                auto& gk = t.grad_buf(ki);
                for (int oc = 0; oc < co; ++oc) {
                    for (int ic = 0; ic < ci; ++ic) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                double acc = 0.0;
                                for (int n = 0; n < xs.n; ++n) {
                                    const scalar* gplane = go.data() + ((static_cast<index_t>(n) * co + oc) * ho) * wo;
                                    const scalar* xplane = xbase + ((static_cast<index_t>(n) * ci + ic) * ph) * pw;
                                    for (int oy = 0; oy < ho; ++oy) {
                                        const scalar* grow = gplane + static_cast<index_t>(oy) * wo;
                                        const scalar* xrow = xplane + (static_cast<index_t>(oy) * stride + ky) * pw + kx;
                                        if (stride == 1) {
                                            for (int ox = 0; ox < wo; ++ox) acc += static_cast<double>(grow[ox]) * xrow[ox];
                                        } else {
                                            for (int ox = 0; ox < wo; ++ox) acc += static_cast<double>(grow[ox]) * xrow[static_cast<index_t>(ox) * stride];
                                        }
                                    }
                                }
                                gk[(((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx)] += static_cast<scalar>(acc);
                            }
                        }
                    }
                }
            }
            if (bi >= 0) {
                auto& gb = t.grad_buf(bi);
                for (int oc = 0; oc < co; ++oc) {
                    double acc = 0.0;
                    for (int n = 0; n < xs.n; ++n) {
                        const scalar* gplane = go.data() + ((static_cast<index_t>(n) * co + oc) * ho) * wo;
                        for (index_t i = 0; i < static_cast<index_t>(ho) * wo; ++i) acc += gplane[i];
                    }
                    gb[static_cast<std::size_t>(oc)] += static_cast<scalar>(acc);
                }
            }
        });
}

Tensor maxpool2(const Tensor& input) {
    const Shape xs = input.shape;
    if (xs.h % 2 != 0 || xs.w % 2 != 0)
        throw std::runtime_error("maxpool2: input " + xs.str() + " needs even h and w; pad first");
    const int ho = xs.h / 2, wo = xs.w / 2;
    Tensor out({xs.n, xs.c, ho, wo});
    auto argmax = std::make_shared<std::vector<index_t>>(static_cast<std::size_t>(out.numel()));
    {
        const scalar* xd = input.ptr();
        scalar* od = out.mut();
        index_t oi = 0;
        for (index_t img = 0; img < static_cast<index_t>(xs.n) * xs.c; ++img) {
            const scalar* plane = xd + img * xs.h * xs.w;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox, ++oi) {
                    index_t base = (static_cast<index_t>(oy) * 2) * xs.w + ox * 2;
                    scalar best = plane[base];
                    index_t besti = base;
                    const index_t cand[3] = {base + 1, base + xs.w, base + xs.w + 1};
                    for (index_t c : cand) {
                        if (plane[c] > best) {  // first maximum in scan order wins ties
                            best = plane[c];
                            besti = c;
                        }
                    }
                    od[oi] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = img * xs.h * xs.w + besti;
                }
            }
        }
    }
    Tape* tape = common_tape({&input});
    if (!tape) return out;
    const int xi = nid(input);
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i)
                gx[static_cast<std::size_t>((*argmax)[i])] += go[i];
        });
}

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    const Shape xs = input.shape;
    if (out_h < 1 || out_w < 1)
        throw std::runtime_error("bilinear_resize: bad target " + std::to_string(out_h) + "x" + std::to_string(out_w));
    const LerpAxis ay = make_lerp(xs.h, out_h);
    const LerpAxis axx = make_lerp(xs.w, out_w);
    Tensor out({xs.n, xs.c, out_h, out_w});
    {
        const scalar* xd = input.ptr();
        scalar* od = out.mut();
        for (index_t img = 0; img < static_cast<index_t>(xs.n) * xs.c; ++img) {
            const scalar* plane = xd + img * xs.h * xs.w;
            scalar* oplane = od + img * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const scalar* r0 = plane + static_cast<index_t>(ay.lo[static_cast<std::size_t>(oy)]) * xs.w;
                const scalar* r1 = plane + static_cast<index_t>(ay.hi[static_cast<std::size_t>(oy)]) * xs.w;
                const scalar fy = ay.frac[static_cast<std::size_t>(oy)];
                scalar* orow = oplane + static_cast<index_t>(oy) * out_w;
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = axx.lo[static_cast<std::size_t>(ox)], x1 = axx.hi[static_cast<std::size_t>(ox)];
                    const scalar fx = axx.frac[static_cast<std::size_t>(ox)];
                    const scalar top = (scalar(1) - fx) * r0[x0] + fx * r0[x1];
                    const scalar bot = (scalar(1) - fx) * r1[x0] + fx * r1[x1];
                    orow[ox] = (scalar(1) - fy) * top + fy * bot;
                }
            }
        }
    }
    Tape* tape = common_tape({&input});
    if (!tape) return out;
    const int xi = nid(input);
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (index_t img = 0; img < static_cast<index_t>(xs.n) * xs.c; ++img) {
                scalar* gplane = gx.data() + img * xs.h * xs.w;
                const scalar* uplane = go.data() + img * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ay.lo[static_cast<std::size_t>(oy)], y1 = ay.hi[static_cast<std::size_t>(oy)];
                    const scalar fy = ay.frac[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int x0 = axx.lo[static_cast<std::size_t>(ox)], x1 = axx.hi[static_cast<std::size_t>(ox)];
                        const scalar fx = axx.frac[static_cast<std::size_t>(ox)];
                        const scalar u = uplane[static_cast<index_t>(oy) * out_w + ox];
                        gplane[static_cast<index_t>(y0) * xs.w + x0] += (scalar(1) - fy) * (scalar(1) - fx) * u;
                        gplane[static_cast<index_t>(y0) * xs.w + x1] += (scalar(1) - fy) * fx * u;
                        gplane[static_cast<index_t>(y1) * xs.w + x0] += fy * (scalar(1) - fx) * u;
                        gplane[static_cast<index_t>(y1) * xs.w + x1] += fy * fx * u;
                    }
                }
            }
        });
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode, scalar eps, scalar momentum) {
    const Shape xs = input.shape;
    if (gamma.numel() != xs.c || beta.numel() != xs.c)
        throw std::runtime_error("batchnorm: gamma/beta size must equal channels of " + xs.str());
    if (state.running_mean.numel() != xs.c || state.running_var.numel() != xs.c)
        throw std::runtime_error("batchnorm: running stats do not match channels of " + xs.str());
    const index_t m = static_cast<index_t>(xs.n) * xs.h * xs.w;
    const index_t plane = static_cast<index_t>(xs.h) * xs.w;

    auto mean = std::make_shared<std::vector<scalar>>(static_cast<std::size_t>(xs.c));
    auto invstd = std::make_shared<std::vector<scalar>>(static_cast<std::size_t>(xs.c));
    const scalar* xd = input.ptr();
    if (mode == Mode::train) {
        for (int c = 0; c < xs.c; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < xs.n; ++n) {
                const scalar* p = xd + (static_cast<index_t>(n) * xs.c + c) * plane;
                for (index_t i = 0; i < plane; ++i) {
                    sum += p[i];
                    sq += static_cast<double>(p[i]) * p[i];
                }
            }
            const double mu = sum / static_cast<double>(m);
            const double var = std::max(sq / static_cast<double>(m) - mu * mu, 0.0);
            (*mean)[static_cast<std::size_t>(c)] = static_cast<scalar>(mu);
            (*invstd)[static_cast<std::size_t>(c)] = static_cast<scalar>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            scalar* rm = state.running_mean.mut();
            scalar* rv = state.running_var.mut();
            rm[c] = (scalar(1) - momentum) * rm[c] + momentum * static_cast<scalar>(mu);
            rv[c] = (scalar(1) - momentum) * rv[c] + momentum * static_cast<scalar>(var);
        }
    } else {
        const scalar* rm = state.running_mean.ptr();
        const scalar* rv = state.running_var.ptr();
        for (int c = 0; c < xs.c; ++c) {
            (*mean)[static_cast<std::size_t>(c)] = rm[c];
            (*invstd)[static_cast<std::size_t>(c)] =
                static_cast<scalar>(1.0 / std::sqrt(static_cast<double>(rv[c]) + static_cast<double>(eps)));
        }
    }

    Tensor out(xs);
    {
        scalar* od = out.mut();
        const scalar* gd = gamma.ptr();
        const scalar* bd = beta.ptr();
        for (int n = 0; n < xs.n; ++n) {
            for (int c = 0; c < xs.c; ++c) {
                const scalar mu = (*mean)[static_cast<std::size_t>(c)];
                const scalar is = (*invstd)[static_cast<std::size_t>(c)];
                const scalar g = gd[c], b = bd[c];
                const scalar* p = xd + (static_cast<index_t>(n) * xs.c + c) * plane;
                scalar* q = od + (static_cast<index_t>(n) * xs.c + c) * plane;
                for (index_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + b;
            }
        }
    }

    Tape* tape = common_tape({&input, &gamma, &beta});
    if (!tape) return out;
    const int xi = nid(input), gi = nid(gamma), bi = nid(beta);
    auto xdp = input.data;
    auto gdp = gamma.data;
    const bool train = (mode == Mode::train);
    return tape->record(std::move(out), {xi, gi, bi},
        [=](Tape& t, const std::vector<scalar>& go) {
            for (int c = 0; c < xs.c; ++c) {
                const scalar mu = (*mean)[static_cast<std::size_t>(c)];
                const scalar is = (*invstd)[static_cast<std::size_t>(c)];
                const scalar g = (*gdp)[static_cast<std::size_t>(c)];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < xs.n; ++n) {
                    const index_t off = (static_cast<index_t>(n) * xs.c + c) * plane;
                    const scalar* p = xdp->data() + off;
                    const scalar* u = go.data() + off;
                    for (index_t i = 0; i < plane; ++i) {
                        sum_dy += u[i];
                        sum_dy_xhat += static_cast<double>(u[i]) * ((p[i] - mu) * is);
                    }
                }
                if (gi >= 0) t.grad_buf(gi)[static_cast<std::size_t>(c)] += static_cast<scalar>(sum_dy_xhat);
                if (bi >= 0) t.grad_buf(bi)[static_cast<std::size_t>(c)] += static_cast<scalar>(sum_dy);
                if (xi >= 0) {
                    auto& gx = t.grad_buf(xi);
                    if (train) {
                        const scalar k = g * is / static_cast<scalar>(m);
                        for (int n = 0; n < xs.n; ++n) {
                            const index_t off = (static_cast<index_t>(n) * xs.c + c) * plane;
                            const scalar* p = xdp->data() + off;
                            const scalar* u = go.data() + off;
                            scalar* d = gx.data() + off;
                            for (index_t i = 0; i < plane; ++i) {
                                const scalar xhat = (p[i] - mu) * is;
                                d[i] += k * (static_cast<scalar>(m) * u[i] -
                                             static_cast<scalar>(sum_dy) - xhat * static_cast<scalar>(sum_dy_xhat));
                            }
                        }
                    } else {
                        const scalar k = g * is;
                        for (int n = 0; n < xs.n; ++n) {
                            const index_t off = (static_cast<index_t>(n) * xs.c + c) * plane;
                            const scalar* u = go.data() + off;
                            scalar* d = gx.data() + off;
                            for (index_t i = 0; i < plane; ++i) d[i] += k * u[i];
                        }
                    }
                }
            }
        });
}

namespace {

Tensor binary_pointwise(const Tensor& a, const Tensor& b, const char* name,
                        const std::function<scalar(scalar, scalar)>& fwd,
                        const std::function<void(Tape&, int, int,
                                                 const std::shared_ptr<std::vector<scalar>>&,
                                                 const std::shared_ptr<std::vector<scalar>>&,
                                                 const std::vector<scalar>&)>& bwd) {
    if (!(a.shape == b.shape))
        throw std::runtime_error(std::string(name) + ": shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Tensor out(a.shape);
    const scalar* ad = a.ptr();
    const scalar* bd = b.ptr();
    scalar* od = out.mut();
    const index_t n = a.numel();
    for (index_t i = 0; i < n; ++i) od[i] = fwd(ad[i], bd[i]);
    Tape* tape = common_tape({&a, &b});
    if (!tape) return out;
    const int ai = nid(a), bi = nid(b);
    auto adp = a.data;
    auto bdp = b.data;
    return tape->record(std::move(out), {ai, bi},
        [=](Tape& t, const std::vector<scalar>& go) { bwd(t, ai, bi, adp, bdp, go); });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_pointwise(a, b, "add",
        [](scalar x, scalar y) { return x + y; },
        [](Tape& t, int ai, int bi, const auto&, const auto&, const std::vector<scalar>& go) {
            if (ai >= 0) {
                auto& ga = t.grad_buf(ai);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bi >= 0) {
                auto& gb = t.grad_buf(bi);
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_pointwise(a, b, "sub",
        [](scalar x, scalar y) { return x - y; },
        [](Tape& t, int ai, int bi, const auto&, const auto&, const std::vector<scalar>& go) {
            if (ai >= 0) {
                auto& ga = t.grad_buf(ai);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bi >= 0) {
                auto& gb = t.grad_buf(bi);
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_pointwise(a, b, "mul",
        [](scalar x, scalar y) { return x * y; },
        [](Tape& t, int ai, int bi, const auto& ad, const auto& bd, const std::vector<scalar>& go) {
            if (ai >= 0) {
                auto& ga = t.grad_buf(ai);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*bd)[i];
            }
            if (bi >= 0) {
                auto& gb = t.grad_buf(bi);
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * (*ad)[i];
            }
        });
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape);
    const scalar* xd = x.ptr();
    scalar* od = out.mut();
    for (index_t i = 0; i < x.numel(); ++i) od[i] = xd[i] > scalar(0) ? xd[i] : scalar(0);
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    auto xdp = x.data;
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i)
                if ((*xdp)[i] > scalar(0)) gx[i] += go[i];
        });
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape);
    const scalar* xd = x.ptr();
    scalar* od = out.mut();
    for (index_t i = 0; i < x.numel(); ++i) od[i] = stable_sigmoid(xd[i]);
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    auto ydp = out.data;  // derivative reuses the forward value
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const scalar y = (*ydp)[i];
                gx[i] += go[i] * y * (scalar(1) - y);
            }
        });
}

Tensor softplus(const Tensor& x) {
    Tensor out(x.shape);
    const scalar* xd = x.ptr();
    scalar* od = out.mut();
    for (index_t i = 0; i < x.numel(); ++i) {
        const scalar z = xd[i];
        od[i] = std::max(z, scalar(0)) + std::log1p(std::exp(-std::abs(z)));
    }
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    auto xdp = x.data;
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i)
                gx[i] += go[i] * stable_sigmoid((*xdp)[i]);
        });
}

Tensor scale(const Tensor& x, double k) {
    Tensor out(x.shape);
    const scalar* xd = x.ptr();
    scalar* od = out.mut();
    const scalar ks = static_cast<scalar>(k);
    for (index_t i = 0; i < x.numel(); ++i) od[i] = ks * xd[i];
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += ks * go[i];
        });
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    const scalar* xd = x.ptr();
    for (index_t i = 0; i < x.numel(); ++i) acc += xd[i];
    Tensor out({1, 1, 1, 1}, {static_cast<scalar>(acc)});
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    const index_t n = x.numel();
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (index_t i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += go[0];
        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape as = a.shape, bs = b.shape;
    if (as.c != 1 || bs.c != 1 || as.n != bs.n || as.w != bs.h)
        throw std::runtime_error("matmul: incompatible shapes " + as.str() + " x " + bs.str());
    const int nb = as.n, m = as.h, k = as.w, p = bs.w;
    Tensor out({nb, 1, m, p});
    {
        const scalar* ad = a.ptr();
        const scalar* bd = b.ptr();
        scalar* od = out.mut();
        std::vector<double> row(static_cast<std::size_t>(p));
        for (int n = 0; n < nb; ++n) {
            const scalar* ab = ad + static_cast<index_t>(n) * m * k;
            const scalar* bb = bd + static_cast<index_t>(n) * k * p;
            scalar* ob = od + static_cast<index_t>(n) * m * p;
            for (int i = 0; i < m; ++i) {
                std::fill(row.begin(), row.end(), 0.0);
                for (int kk = 0; kk < k; ++kk) {
                    const double av = ab[static_cast<index_t>(i) * k + kk];
                    const scalar* brow = bb + static_cast<index_t>(kk) * p;
                    for (int j = 0; j < p; ++j) row[static_cast<std::size_t>(j)] += av * brow[j];
                }
                for (int j = 0; j < p; ++j) ob[static_cast<index_t>(i) * p + j] = static_cast<scalar>(row[static_cast<std::size_t>(j)]);
            }
        }
    }
    Tape* tape = common_tape({&a, &b});
    if (!tape) return out;
    const int ai = nid(a), bi = nid(b);
    auto adp = a.data;
    auto bdp = b.data;
    return tape->record(std::move(out), {ai, bi},
        [=](Tape& t, const std::vector<scalar>& go) {
            for (int n = 0; n < nb; ++n) {
                const scalar* gb = go.data() + static_cast<index_t>(n) * m * p;
                const scalar* ab = adp->data() + static_cast<index_t>(n) * m * k;
                const scalar* bb = bdp->data() + static_cast<index_t>(n) * k * p;
                if (ai >= 0) {
                    auto& ga = t.grad_buf(ai);
                    scalar* gab = ga.data() + static_cast<index_t>(n) * m * k;
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            double acc = 0.0;
                            for (int j = 0; j < p; ++j)
                                acc += static_cast<double>(gb[static_cast<index_t>(i) * p + j]) * bb[static_cast<index_t>(kk) * p + j];
                            gab[static_cast<index_t>(i) * k + kk] += static_cast<scalar>(acc);
                        }
                }
                if (bi >= 0) {
                    auto& gbv = t.grad_buf(bi);
                    scalar* gbb = gbv.data() + static_cast<index_t>(n) * k * p;
                    for (int kk = 0; kk < k; ++kk)
                        for (int j = 0; j < p; ++j) {
                            double acc = 0.0;
                            for (int i = 0; i < m; ++i)
                                acc += static_cast<double>(ab[static_cast<index_t>(i) * k + kk]) * gb[static_cast<index_t>(i) * p + j];
                            gbb[static_cast<index_t>(kk) * p + j] += static_cast<scalar>(acc);
                        }
                }
            }
        });
}

Tensor transpose(const Tensor& a) {
    const Shape as = a.shape;
    Tensor out({as.n, as.c, as.w, as.h});
    {
        const scalar* ad = a.ptr();
        scalar* od = out.mut();
        for (index_t img = 0; img < static_cast<index_t>(as.n) * as.c; ++img) {
            const scalar* ap = ad + img * as.h * as.w;
            scalar* op = od + img * as.h * as.w;
            for (int y = 0; y < as.h; ++y)
                for (int x = 0; x < as.w; ++x)
                    op[static_cast<index_t>(x) * as.h + y] = ap[static_cast<index_t>(y) * as.w + x];
        }
    }
    Tape* tape = common_tape({&a});
    if (!tape) return out;
    const int ai = nid(a);
    return tape->record(std::move(out), {ai},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& ga = t.grad_buf(ai);
            for (index_t img = 0; img < static_cast<index_t>(as.n) * as.c; ++img) {
                scalar* gp = ga.data() + img * as.h * as.w;
                const scalar* up = go.data() + img * as.h * as.w;
                for (int y = 0; y < as.h; ++y)
                    for (int x = 0; x < as.w; ++x)
                        gp[static_cast<index_t>(y) * as.w + x] += up[static_cast<index_t>(x) * as.h + y];
            }
        });
}

Tensor reshape(const Tensor& x, Shape s) {
    if (s.numel() != x.numel())
        throw std::runtime_error("reshape: cannot view " + x.shape.str() + " as " + s.str());
    Tensor out;
    out.shape = s;
    out.data = x.data;  // same buffer, new metadata
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        });
}

Tensor slice_n(const Tensor& x, int i) {
    const Shape xs = x.shape;
    if (i < 0 || i >= xs.n)
        throw std::runtime_error("slice_n: index " + std::to_string(i) + " out of range for " + xs.str());
    const index_t sz = static_cast<index_t>(xs.c) * xs.h * xs.w;
    Tensor out({1, xs.c, xs.h, xs.w});
    std::memcpy(out.mut(), x.ptr() + static_cast<index_t>(i) * sz, sizeof(scalar) * static_cast<std::size_t>(sz));
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    const int xi = nid(x);
    return tape->record(std::move(out), {xi},
        [=](Tape& t, const std::vector<scalar>& go) {
            auto& gx = t.grad_buf(xi);
            scalar* dst = gx.data() + static_cast<index_t>(i) * sz;
            for (index_t j = 0; j < sz; ++j) dst[j] += go[static_cast<std::size_t>(j)];
        });
}

Tensor eye_batch(int n, int dim) {
    Tensor out({n, 1, dim, dim});
    scalar* od = out.mut();
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < dim; ++i)
            od[(static_cast<index_t>(b) * dim + i) * dim + i] = scalar(1);
    return out;
}

GradcheckReport gradcheck(const std::function<Tensor(Tape&, const Tensor&)>& graph,
                          const Tensor& input, double step, double threshold) {
    std::vector<scalar> analytic;
    {
        Tape tape;
        Tensor x = input.detached();
        tape.leaf(x);
        Tensor loss = graph(tape, x);
        if (loss.numel() != 1)
            throw std::runtime_error("gradcheck: graph must produce a scalar");
        if (loss.tracked())
            tape.backward(loss);
        analytic = tape.grad_or_zeros(x);
    }

    GradcheckReport rep;
    const index_t n = input.numel();
    for (index_t i = 0; i < n; ++i) {
        double fp, fm;
        {
            Tensor x = input.clone();
            x.mut()[i] = static_cast<scalar>(static_cast<double>(x.ptr()[i]) + step);
            Tape dummy;
            fp = static_cast<double>(graph(dummy, x).item());
        }
        {
            Tensor x = input.clone();
            x.mut()[i] = static_cast<scalar>(static_cast<double>(x.ptr()[i]) - step);
            Tape dummy;
            fm = static_cast<double>(graph(dummy, x).item());
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = static_cast<double>(analytic[static_cast<std::size_t>(i)]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-2});
        rep.max_rel_err = std::max(rep.max_rel_err, std::abs(a - numeric) / denom);
    }
    rep.pass = rep.max_rel_err <= threshold;
    return rep;
}

}  // namespace fbwc
