#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "lkmn/fft.hpp"
#include "lkmn/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lkmn::ops {

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Parameters of one convolution: weight (c_out, c_in/groups, k_h, k_w),
/// optional bias stored as a (1, c_out, 1, 1) tensor, stride, zero padding and
/// channel grouping. Convolution is cross-correlation (no kernel flip).
template <typename S>
struct ConvParamsT {
    TensorT<S> weight;
    TensorT<S> bias; // undefined handle = no bias
    int stride = 1;
    int pad_h = 0;
    int pad_w = 0;
    int groups = 1;
};

using ConvParams = ConvParamsT<float>;

namespace detail_conv {

struct ConvDims {
    std::int64_t n, cin, hin, win;
    std::int64_t cout, cing, kh, kw;
    std::int64_t oh, ow;
    std::int64_t stride, ph, pw, g;
};

template <typename S>
void forward(const S* x, const S* w, const S* b, S* y, const ConvDims& d) {
    const std::int64_t hw = d.hin * d.win;
    if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.ph == 0 && d.pw == 0 && d.g == 1) {
        // pointwise conv: per (n, oc) plane, accumulate input planes
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t n = 0; n < d.n; ++n) {
            for (std::int64_t oc = 0; oc < d.cout; ++oc) {
                S* yo = y + (n * d.cout + oc) * hw;
                const S bv = b ? b[oc] : S(0);
                for (std::int64_t p = 0; p < hw; ++p) yo[p] = bv;
                const S* wrow = w + oc * d.cin;
                for (std::int64_t ic = 0; ic < d.cin; ++ic) {
                    const S wv = wrow[ic];
                    const S* xi = x + (n * d.cin + ic) * hw;
                    for (std::int64_t p = 0; p < hw; ++p) yo[p] += wv * xi[p];
                }
            }
        }
        return;
    }
    const std::int64_t coutg = d.cout / d.g;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t oc = 0; oc < d.cout; ++oc) {
            const std::int64_t gi = oc / coutg;
            const std::int64_t ic0 = gi * d.cing;
            S* yo = y + (n * d.cout + oc) * d.oh * d.ow;
            for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                const std::int64_t iy0 = oy * d.stride - d.ph;
                const std::int64_t klo = std::max<std::int64_t>(0, -iy0);
                const std::int64_t khi = std::min(d.kh, d.hin - iy0);
                for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                    const std::int64_t ix0 = ox * d.stride - d.pw;
                    const std::int64_t llo = std::max<std::int64_t>(0, -ix0);
                    const std::int64_t lhi = std::min(d.kw, d.win - ix0);
                    S acc = b ? b[oc] : S(0);
                    for (std::int64_t icg = 0; icg < d.cing; ++icg) {
                        const S* xp = x + ((n * d.cin + ic0 + icg) * d.hin + iy0) * d.win + ix0;
                        const S* wp = w + ((oc * d.cing + icg) * d.kh) * d.kw;
                        for (std::int64_t ky = klo; ky < khi; ++ky) {
                            const S* xr = xp + ky * d.win;
                            const S* wr = wp + ky * d.kw;
                            for (std::int64_t kx = llo; kx < lhi; ++kx) {
                                acc += xr[kx] * wr[kx];
                            }
                        }
                    }
                    yo[oy * d.ow + ox] = acc;
                }
            }
        }
    }
}

template <typename S>
void backward_input(S* gx, const S* w, const S* gy, const ConvDims& d) {
    const std::int64_t hw = d.hin * d.win;
    if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.ph == 0 && d.pw == 0 && d.g == 1) {
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t n = 0; n < d.n; ++n) {
            for (std::int64_t ic = 0; ic < d.cin; ++ic) {
                S* gxp = gx + (n * d.cin + ic) * hw;
                for (std::int64_t oc = 0; oc < d.cout; ++oc) {
                    const S wv = w[oc * d.cin + ic];
                    const S* gyp = gy + (n * d.cout + oc) * hw;
                    for (std::int64_t p = 0; p < hw; ++p) gxp[p] += wv * gyp[p];
                }
            }
        }
        return;
    }
    const std::int64_t coutg = d.cout / d.g;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t ic = 0; ic < d.cin; ++ic) {
            const std::int64_t gi = ic / d.cing;
            const std::int64_t icg = ic % d.cing;
            const std::int64_t oc0 = gi * coutg;
            S* gxp = gx + (n * d.cin + ic) * hw;
            for (std::int64_t iy = 0; iy < d.hin; ++iy) {
                for (std::int64_t ix = 0; ix < d.win; ++ix) {
                    S acc = S(0);
                    for (std::int64_t oc = oc0; oc < oc0 + coutg; ++oc) {
                        const S* wp = w + ((oc * d.cing + icg) * d.kh) * d.kw;
                        const S* gyp = gy + (n * d.cout + oc) * d.oh * d.ow;
                        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
                            const std::int64_t t = iy + d.ph - ky;
                            if (t < 0 || t % d.stride != 0) continue;
                            const std::int64_t oy = t / d.stride;
                            if (oy >= d.oh) continue;
                            for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                                const std::int64_t u = ix + d.pw - kx;
                                if (u < 0 || u % d.stride != 0) continue;
                                const std::int64_t ox = u / d.stride;
                                if (ox >= d.ow) continue;
                                acc += wp[ky * d.kw + kx] * gyp[oy * d.ow + ox];
                            }
                        }
                    }
                    gxp[iy * d.win + ix] += acc;
                }
            }
        }
    }
}

template <typename S>
void backward_weight(S* gw, const S* x, const S* gy, const ConvDims& d) {
    const std::int64_t coutg = d.cout / d.g;
    const std::int64_t hw = d.hin * d.win;
    if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.ph == 0 && d.pw == 0 && d.g == 1) {
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t oc = 0; oc < d.cout; ++oc) {
            for (std::int64_t ic = 0; ic < d.cin; ++ic) {
                S acc = S(0);
                for (std::int64_t n = 0; n < d.n; ++n) {
                    const S* gyp = gy + (n * d.cout + oc) * hw;
                    const S* xp = x + (n * d.cin + ic) * hw;
                    for (std::int64_t p = 0; p < hw; ++p) acc += gyp[p] * xp[p];
                }
                gw[oc * d.cin + ic] += acc;
            }
        }
        return;
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t oc = 0; oc < d.cout; ++oc) {
        for (std::int64_t icg = 0; icg < d.cing; ++icg) {
            const std::int64_t gi = oc / coutg;
            const std::int64_t ic = gi * d.cing + icg;
            for (std::int64_t ky = 0; ky < d.kh; ++ky) {
                for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                    S acc = S(0);
                    for (std::int64_t n = 0; n < d.n; ++n) {
                        const S* gyp = gy + (n * d.cout + oc) * d.oh * d.ow;
                        const S* xp = x + (n * d.cin + ic) * d.hin * d.win;
                        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                            const std::int64_t iy = oy * d.stride - d.ph + ky;
                            if (iy < 0 || iy >= d.hin) continue;
                            for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                                const std::int64_t ix = ox * d.stride - d.pw + kx;
                                if (ix < 0 || ix >= d.win) continue;
                                acc += gyp[oy * d.ow + ox] * xp[iy * d.win + ix];
                            }
                        }
                    }
                    gw[((oc * d.cing + icg) * d.kh + ky) * d.kw + kx] += acc;
                }
            }
        }
    }
}

template <typename S>
void backward_bias(S* gb, const S* gy, const ConvDims& d) {
    const std::int64_t ohw = d.oh * d.ow;
#pragma omp parallel for schedule(static)
    for (std::int64_t oc = 0; oc < d.cout; ++oc) {
        S acc = S(0);
        for (std::int64_t n = 0; n < d.n; ++n) {
            const S* gyp = gy + (n * d.cout + oc) * ohw;
            for (std::int64_t p = 0; p < ohw; ++p) acc += gyp[p];
        }
        gb[oc] += acc;
    }
}

} // namespace detail_conv

/// 2-D grouped convolution (cross-correlation) with zero padding.
/// Output spatial size follows floor((in + 2*pad - k) / stride) + 1.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const ConvParamsT<S>& p) {
    const Shape xs = x.shape();
    const Shape ws = p.weight.shape();
    if (p.groups < 1) throw ConfigError("conv2d: groups must be >= 1");
    if (p.stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (p.pad_h < 0 || p.pad_w < 0) throw ConfigError("conv2d: padding must be >= 0");
    if (ws.n % p.groups != 0) {
        throw ConfigError("conv2d: output channels " + std::to_string(ws.n) +
                          " not divisible by groups " + std::to_string(p.groups));
    }
    if (xs.c != ws.c * p.groups) {
        throw DimensionError("conv2d: channel axis mismatch: input has " + std::to_string(xs.c) +
                             " channels, weight expects " + std::to_string(ws.c * p.groups));
    }
    if (p.bias.defined()) {
        const Shape bs = p.bias.shape();
        if (!(bs.n == 1 && bs.c == ws.n && bs.h == 1 && bs.w == 1)) {
            throw DimensionError("conv2d: bias must have shape (1," + std::to_string(ws.n) +
                                 ",1,1), got " + to_string(bs));
        }
    }
    detail_conv::ConvDims d{};
    d.n = xs.n;
    d.cin = xs.c;
    d.hin = xs.h;
    d.win = xs.w;
    d.cout = ws.n;
    d.cing = ws.c;
    d.kh = ws.h;
    d.kw = ws.w;
    d.stride = p.stride;
    d.ph = p.pad_h;
    d.pw = p.pad_w;
    d.g = p.groups;
    d.oh = (xs.h + 2 * d.ph - d.kh) / d.stride + 1;
    d.ow = (xs.w + 2 * d.pw - d.kw) / d.stride + 1;
    if (xs.h + 2 * d.ph < d.kh || d.oh < 1) {
        throw DimensionError("conv2d: h axis too small: input h=" + std::to_string(xs.h) +
                             " with pad " + std::to_string(d.ph) + " cannot fit kernel h=" +
                             std::to_string(d.kh));
    }
    if (xs.w + 2 * d.pw < d.kw || d.ow < 1) {
        throw DimensionError("conv2d: w axis too small: input w=" + std::to_string(xs.w) +
                             " with pad " + std::to_string(d.pw) + " cannot fit kernel w=" +
                             std::to_string(d.kw));
    }

    TensorT<S> out = TensorT<S>::zeros({d.n, d.cout, d.oh, d.ow});
    detail_conv::forward(x.data(), p.weight.data(), p.bias.defined() ? p.bias.data() : nullptr,
                         out.data(), d);

    auto xn = x.node();
    auto wn = p.weight.node();
    auto bn = p.bias.defined() ? p.bias.node() : nullptr;
    std::vector<std::shared_ptr<detail::NodeT<S>>> parents{xn, wn};
    if (bn) parents.push_back(bn);
    record<S>(out, std::move(parents), [xn, wn, bn, d](detail::NodeT<S>& nd) {
        const S* gy = nd.grad.data();
        if (xn->requires_grad) {
            detail_conv::backward_input(xn->grad_buf().data(), wn->value.data(), gy, d);
        }
        if (wn->requires_grad) {
            detail_conv::backward_weight(wn->grad_buf().data(), xn->value.data(), gy, d);
        }
        if (bn && bn->requires_grad) {
            detail_conv::backward_bias(bn->grad_buf().data(), gy, d);
        }
    });
    return out;
}

enum class StripOrientation { horizontal, vertical };

/// Depthwise 1xK / Kx1 convolution with "same" padding; K must be odd.
/// The params must describe a depthwise kernel matching the orientation.
template <typename S>
TensorT<S> strip_dwconv(const TensorT<S>& x, int k, StripOrientation orient,
                        const ConvParamsT<S>& p) {
    if (k < 1 || k % 2 == 0) {
        throw ConfigError("strip_dwconv: kernel length must be odd, got " + std::to_string(k));
    }
    const Shape xs = x.shape();
    const Shape ws = p.weight.shape();
    const std::int64_t expect_kh = orient == StripOrientation::vertical ? k : 1;
    const std::int64_t expect_kw = orient == StripOrientation::horizontal ? k : 1;
    if (ws.h != expect_kh || ws.w != expect_kw || ws.c != 1 || ws.n != xs.c) {
        throw DimensionError("strip_dwconv: weight shape " + to_string(ws) +
                             " does not match depthwise (" + std::to_string(xs.c) + ",1," +
                             std::to_string(expect_kh) + "," + std::to_string(expect_kw) + ")");
    }
    ConvParamsT<S> q = p;
    q.stride = 1;
    q.groups = static_cast<int>(xs.c);
    q.pad_h = orient == StripOrientation::vertical ? (k - 1) / 2 : 0;
    q.pad_w = orient == StripOrientation::horizontal ? (k - 1) / 2 : 0;
    return conv2d(x, q);
}

// ---------------------------------------------------------------------------
// channel rearrangement
// ---------------------------------------------------------------------------

/// Group-wise channel permutation: viewing channels as (g, c/g), output
/// channel j*g + i receives input channel i*(c/g) + j.
template <typename S>
TensorT<S> channel_shuffle(const TensorT<S>& x, int groups) {
    const Shape s = x.shape();
    if (groups < 1 || s.c % groups != 0) {
        throw ConfigError("channel_shuffle: channels " + std::to_string(s.c) +
                          " not divisible by groups " + std::to_string(groups));
    }
    const std::int64_t g = groups;
    const std::int64_t cg = s.c / g;
    std::vector<std::int64_t> src(static_cast<std::size_t>(s.c));
    for (std::int64_t oc = 0; oc < s.c; ++oc) {
        const std::int64_t i = oc % g;
        const std::int64_t j = oc / g;
        src[static_cast<std::size_t>(oc)] = i * cg + j;
    }
    const std::int64_t hw = s.h * s.w;
    TensorT<S> out = TensorT<S>::zeros(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t oc = 0; oc < s.c; ++oc) {
            std::memcpy(out.data() + (n * s.c + oc) * hw,
                        x.data() + (n * s.c + src[static_cast<std::size_t>(oc)]) * hw,
                        sizeof(S) * static_cast<std::size_t>(hw));
        }
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, src, s, hw](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t oc = 0; oc < s.c; ++oc) {
                const S* g = nd.grad.data() + (n * s.c + oc) * hw;
                S* gp = gx.data() + (n * s.c + src[static_cast<std::size_t>(oc)]) * hw;
                for (std::int64_t p = 0; p < hw; ++p) gp[p] += g[p];
            }
        }
    });
    return out;
}

/// Split along channels into [0, first) and [first, c).
template <typename S>
std::pair<TensorT<S>, TensorT<S>> channel_split(const TensorT<S>& x, std::int64_t first) {
    const Shape s = x.shape();
    if (first <= 0 || first >= s.c) {
        throw ConfigError("channel_split: first=" + std::to_string(first) +
                          " out of range (0," + std::to_string(s.c) + ")");
    }
    const std::int64_t hw = s.h * s.w;
    auto slice = [&](std::int64_t c0, std::int64_t cn) {
        TensorT<S> out = TensorT<S>::zeros({s.n, cn, s.h, s.w});
        for (std::int64_t n = 0; n < s.n; ++n) {
            std::memcpy(out.data() + n * cn * hw, x.data() + (n * s.c + c0) * hw,
                        sizeof(S) * static_cast<std::size_t>(cn * hw));
        }
        auto xn = x.node();
        record<S>(out, {xn}, [xn, s, c0, cn, hw](detail::NodeT<S>& nd) {
            auto& gx = xn->grad_buf();
            for (std::int64_t n = 0; n < s.n; ++n) {
                const S* g = nd.grad.data() + n * cn * hw;
                S* gp = gx.data() + (n * s.c + c0) * hw;
                for (std::int64_t p = 0; p < cn * hw; ++p) gp[p] += g[p];
            }
        });
        return out;
    };
    return {slice(0, first), slice(first, s.c - first)};
}

/// Stack tensors along the channel axis in argument order.
template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs) {
    if (xs.empty()) throw ConfigError("concat_channels: empty input list");
    const Shape s0 = xs[0].shape();
    std::int64_t ctotal = 0;
    for (const auto& t : xs) {
        const Shape s = t.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
            throw DimensionError("concat_channels: spatial/batch axes differ: " + to_string(s0) +
                                 " vs " + to_string(s));
        }
        ctotal += s.c;
    }
    const std::int64_t hw = s0.h * s0.w;
    TensorT<S> out = TensorT<S>::zeros({s0.n, ctotal, s0.h, s0.w});
    std::vector<std::shared_ptr<detail::NodeT<S>>> parents;
    std::vector<std::int64_t> offs;
    std::int64_t c0 = 0;
    for (const auto& t : xs) {
        const std::int64_t cn = t.shape().c;
        for (std::int64_t n = 0; n < s0.n; ++n) {
            std::memcpy(out.data() + (n * ctotal + c0) * hw, t.data() + n * cn * hw,
                        sizeof(S) * static_cast<std::size_t>(cn * hw));
        }
        parents.push_back(t.node());
        offs.push_back(c0);
        c0 += cn;
    }
    auto srcs = parents; // keep alive in closure
    record<S>(out, std::move(parents), [srcs, offs, s0, ctotal, hw](detail::NodeT<S>& nd) {
        for (std::size_t i = 0; i < srcs.size(); ++i) {
            auto& p = *srcs[i];
            if (!p.requires_grad) continue;
            auto& gp = p.grad_buf();
            const std::int64_t cn = p.shape.c;
            for (std::int64_t n = 0; n < s0.n; ++n) {
                const S* g = nd.grad.data() + (n * ctotal + offs[i]) * hw;
                S* dst = gp.data() + n * cn * hw;
                for (std::int64_t q = 0; q < cn * hw; ++q) dst[q] += g[q];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// pooling / activations / pixel shuffle
// ---------------------------------------------------------------------------

/// Spatial mean per (n, c); output shape (n, c, 1, 1).
template <typename S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
    const Shape s = x.shape();
    const std::int64_t hw = s.h * s.w;
    TensorT<S> out = TensorT<S>::zeros({s.n, s.c, 1, 1});
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const S* xp = x.data() + nc * hw;
        S acc = S(0);
        for (std::int64_t p = 0; p < hw; ++p) acc += xp[p];
        out.data()[nc] = acc / static_cast<S>(hw);
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, s, hw](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        const S inv = S(1) / static_cast<S>(hw);
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            const S g = nd.grad[static_cast<std::size_t>(nc)] * inv;
            S* gp = gx.data() + nc * hw;
            for (std::int64_t p = 0; p < hw; ++p) gp[p] += g;
        }
    });
    return out;
}

enum class Activation { relu, gelu, sigmoid };

/// Elementwise nonlinearity. GELU uses the tanh approximation
/// 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <typename S>
TensorT<S> activation(const TensorT<S>& x, Activation kind) {
    const Shape s = x.shape();
    const std::int64_t n = s.numel();
    TensorT<S> out = TensorT<S>::zeros(s);
    const S* xp = x.data();
    S* yp = out.data();
    constexpr S kAlpha = S(0.7978845608028654); // sqrt(2/pi)
    constexpr S kBeta = S(0.044715);
    switch (kind) {
    case Activation::relu:
        for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] > S(0) ? xp[i] : S(0);
        break;
    case Activation::sigmoid:
        for (std::int64_t i = 0; i < n; ++i) yp[i] = S(1) / (S(1) + std::exp(-xp[i]));
        break;
    case Activation::gelu:
        for (std::int64_t i = 0; i < n; ++i) {
            const S v = xp[i];
            const S t = std::tanh(kAlpha * (v + kBeta * v * v * v));
            yp[i] = S(0.5) * v * (S(1) + t);
        }
        break;
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, kind, n](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        const S* g = nd.grad.data();
        const S* xv = xn->value.data();
        const S* yv = nd.value.data();
        switch (kind) {
        case Activation::relu:
            for (std::int64_t i = 0; i < n; ++i) {
                if (xv[i] > S(0)) gx[static_cast<std::size_t>(i)] += g[i];
            }
            break;
        case Activation::sigmoid:
            for (std::int64_t i = 0; i < n; ++i) {
                gx[static_cast<std::size_t>(i)] += g[i] * yv[i] * (S(1) - yv[i]);
            }
            break;
        case Activation::gelu:
            for (std::int64_t i = 0; i < n; ++i) {
                const S v = xv[i];
                const S u = kAlpha * (v + kBeta * v * v * v);
                const S t = std::tanh(u);
                const S du = kAlpha * (S(1) + S(3) * kBeta * v * v);
                const S d = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
                gx[static_cast<std::size_t>(i)] += g[i] * d;
            }
            break;
        }
    });
    return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
    return activation(x, Activation::relu);
}
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
    return activation(x, Activation::gelu);
}
template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    return activation(x, Activation::sigmoid);
}

/// Sub-pixel rearrangement: (n, c, h, w) -> (n, c/r^2, h*r, w*r) with
/// output(n, co, y*r+dy, x*r+dx) = input(n, co*r^2 + dy*r + dx, y, x).
template <typename S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r) {
    const Shape s = x.shape();
    if (r < 1 || s.c % (static_cast<std::int64_t>(r) * r) != 0) {
        throw ConfigError("pixel_shuffle: channels " + std::to_string(s.c) +
                          " not divisible by r^2 = " + std::to_string(r * r));
    }
    const std::int64_t rr = static_cast<std::int64_t>(r) * r;
    const Shape os{s.n, s.c / rr, s.h * r, s.w * r};
    TensorT<S> out = TensorT<S>::zeros(os);
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t co = 0; co < os.c; ++co) {
            for (std::int64_t dy = 0; dy < r; ++dy) {
                for (std::int64_t dx = 0; dx < r; ++dx) {
                    const std::int64_t ci = co * rr + dy * r + dx;
                    const S* xp = x.data() + (n * s.c + ci) * s.h * s.w;
                    S* yp = out.data() + (n * os.c + co) * os.h * os.w;
                    for (std::int64_t y = 0; y < s.h; ++y) {
                        for (std::int64_t xq = 0; xq < s.w; ++xq) {
                            yp[(y * r + dy) * os.w + (xq * r + dx)] = xp[y * s.w + xq];
                        }
                    }
                }
            }
        }
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, s, os, r, rr](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t co = 0; co < os.c; ++co) {
                for (std::int64_t dy = 0; dy < r; ++dy) {
                    for (std::int64_t dx = 0; dx < r; ++dx) {
                        const std::int64_t ci = co * rr + dy * r + dx;
                        S* gp = gx.data() + (n * s.c + ci) * s.h * s.w;
                        const S* g = nd.grad.data() + (n * os.c + co) * os.h * os.w;
                        for (std::int64_t y = 0; y < s.h; ++y) {
                            for (std::int64_t xq = 0; xq < s.w; ++xq) {
                                gp[y * s.w + xq] += g[(y * r + dy) * os.w + (xq * r + dx)];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// frequency domain
// ---------------------------------------------------------------------------

namespace detail_fft {

// Accumulate the adjoint of one DFT output component into gx. `as_imag`
// selects whether g is the gradient of the imaginary part.
template <typename S>
void adjoint_accum(const S* g, S* gx, std::int64_t planes, std::int64_t h, std::int64_t w,
                   bool as_imag) {
    const std::int64_t hw = h * w;
#pragma omp parallel for schedule(static)
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        std::vector<lkmn::detail::cplx> buf(static_cast<std::size_t>(hw));
        const S* gp = g + pl * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            buf[static_cast<std::size_t>(i)] =
                as_imag ? lkmn::detail::cplx(0.0, static_cast<double>(gp[i]))
                        : lkmn::detail::cplx(static_cast<double>(gp[i]), 0.0);
        }
        lkmn::detail::dft2(buf, h, w, +1);
        S* dst = gx + pl * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            dst[i] += static_cast<S>(buf[static_cast<std::size_t>(i)].real());
        }
    }
}

} // namespace detail_fft

/// Unnormalized 2-D DFT of each (n, c) plane; returns (real, imag) tensors of
/// the input's shape. The DC coefficient equals the plane sum.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> fft2(const TensorT<S>& x) {
    const Shape s = x.shape();
    const std::int64_t planes = s.n * s.c;
    const std::int64_t hw = s.h * s.w;
    TensorT<S> re = TensorT<S>::zeros(s);
    TensorT<S> im = TensorT<S>::zeros(s);
#pragma omp parallel for schedule(static)
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        std::vector<detail::cplx> buf(static_cast<std::size_t>(hw));
        const S* xp = x.data() + pl * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            buf[static_cast<std::size_t>(i)] = detail::cplx(static_cast<double>(xp[i]), 0.0);
        }
        detail::dft2(buf, s.h, s.w, -1);
        S* rp = re.data() + pl * hw;
        S* ip = im.data() + pl * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            rp[i] = static_cast<S>(buf[static_cast<std::size_t>(i)].real());
            ip[i] = static_cast<S>(buf[static_cast<std::size_t>(i)].imag());
        }
    }
    auto xn = x.node();
    record<S>(re, {xn}, [xn, s, planes](detail::NodeT<S>& nd) {
        detail_fft::adjoint_accum(nd.grad.data(), xn->grad_buf().data(), planes, s.h, s.w, false);
    });
    record<S>(im, {xn}, [xn, s, planes](detail::NodeT<S>& nd) {
        detail_fft::adjoint_accum(nd.grad.data(), xn->grad_buf().data(), planes, s.h, s.w, true);
    });
    return {re, im};
}

// ---------------------------------------------------------------------------
// elementwise arithmetic and reductions
// ---------------------------------------------------------------------------

namespace detail_ew {

template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
}

} // namespace detail_ew

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail_ew::check_same_shape(a, b, "add");
    const std::int64_t n = a.numel();
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    record<S>(out, {an, bn}, [an, bn, n](detail::NodeT<S>& nd) {
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            for (std::int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)];
        }
    });
    return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    detail_ew::check_same_shape(a, b, "sub");
    const std::int64_t n = a.numel();
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    record<S>(out, {an, bn}, [an, bn, n](detail::NodeT<S>& nd) {
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            for (std::int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] -= nd.grad[static_cast<std::size_t>(i)];
        }
    });
    return out;
}

/// Hadamard product.
template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail_ew::check_same_shape(a, b, "mul");
    const std::int64_t n = a.numel();
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    record<S>(out, {an, bn}, [an, bn, n](detail::NodeT<S>& nd) {
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            const S* bv = bn->value.data();
            for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)] * bv[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            const S* av = an->value.data();
            for (std::int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)] * av[i];
        }
    });
    return out;
}

/// Per-channel scaling: x (n,c,h,w) * s (ns,c,1,1) with ns in {1, n}. Used for
/// the channel-attention gate (ns = n) and the learnable scaler (ns = 1).
template <typename S>
TensorT<S> scale_channels(const TensorT<S>& x, const TensorT<S>& s) {
    const Shape xs = x.shape();
    const Shape ss = s.shape();
    if (ss.c != xs.c || ss.h != 1 || ss.w != 1 || (ss.n != 1 && ss.n != xs.n)) {
        throw DimensionError("scale_channels: scaler shape " + to_string(ss) +
                             " incompatible with input " + to_string(xs));
    }
    const std::int64_t hw = xs.h * xs.w;
    TensorT<S> out = TensorT<S>::zeros(xs);
    for (std::int64_t n = 0; n < xs.n; ++n) {
        const std::int64_t sn = ss.n == 1 ? 0 : n;
        for (std::int64_t c = 0; c < xs.c; ++c) {
            const S sv = s.data()[sn * xs.c + c];
            const S* xp = x.data() + (n * xs.c + c) * hw;
            S* yp = out.data() + (n * xs.c + c) * hw;
            for (std::int64_t p = 0; p < hw; ++p) yp[p] = xp[p] * sv;
        }
    }
    auto xn = x.node();
    auto sn_ = s.node();
    record<S>(out, {xn, sn_}, [xn, sn_, xs, ss, hw](detail::NodeT<S>& nd) {
        if (xn->requires_grad) {
            auto& gx = xn->grad_buf();
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const std::int64_t sn = ss.n == 1 ? 0 : n;
                for (std::int64_t c = 0; c < xs.c; ++c) {
                    const S sv = sn_->value[static_cast<std::size_t>(sn * xs.c + c)];
                    const S* g = nd.grad.data() + (n * xs.c + c) * hw;
                    S* gp = gx.data() + (n * xs.c + c) * hw;
                    for (std::int64_t p = 0; p < hw; ++p) gp[p] += g[p] * sv;
                }
            }
        }
        if (sn_->requires_grad) {
            auto& gs = sn_->grad_buf();
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const std::int64_t sn = ss.n == 1 ? 0 : n;
                for (std::int64_t c = 0; c < xs.c; ++c) {
                    const S* g = nd.grad.data() + (n * xs.c + c) * hw;
                    const S* xp = xn->value.data() + (n * xs.c + c) * hw;
                    S acc = S(0);
                    for (std::int64_t p = 0; p < hw; ++p) acc += g[p] * xp[p];
                    gs[static_cast<std::size_t>(sn * xs.c + c)] += acc;
                }
            }
        }
    });
    return out;
}

template <typename S>
TensorT<S> mul_scalar(const TensorT<S>& x, S k) {
    const std::int64_t n = x.numel();
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * k;
    auto xn = x.node();
    record<S>(out, {xn}, [xn, k, n](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        for (std::int64_t i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)] * k;
    });
    return out;
}

/// Elementwise |x|; subgradient 0 at the origin.
template <typename S>
TensorT<S> abs_val(const TensorT<S>& x) {
    const std::int64_t n = x.numel();
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = std::abs(x.data()[i]);
    auto xn = x.node();
    record<S>(out, {xn}, [xn, n](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        const S* xv = xn->value.data();
        for (std::int64_t i = 0; i < n; ++i) {
            const S sgn = xv[i] > S(0) ? S(1) : (xv[i] < S(0) ? S(-1) : S(0));
            gx[static_cast<std::size_t>(i)] += nd.grad[static_cast<std::size_t>(i)] * sgn;
        }
    });
    return out;
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
    const std::int64_t n = x.numel();
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) acc += x.data()[i];
    TensorT<S> out = TensorT<S>::from_data({1, 1, 1, 1}, {acc});
    auto xn = x.node();
    record<S>(out, {xn}, [xn, n](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        const S g = nd.grad[0];
        for (std::int64_t i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += g;
    });
    return out;
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    const std::int64_t n = x.numel();
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) acc += x.data()[i];
    TensorT<S> out = TensorT<S>::from_data({1, 1, 1, 1}, {acc / static_cast<S>(n)});
    auto xn = x.node();
    record<S>(out, {xn}, [xn, n](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        const S g = nd.grad[0] / static_cast<S>(n);
        for (std::int64_t i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += g;
    });
    return out;
}

// ---------------------------------------------------------------------------
// spatial rearrangements (dihedral group, crops)
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> flip_h(const TensorT<S>& x) {
    const Shape s = x.shape();
    TensorT<S> out = TensorT<S>::zeros(s);
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const S* xp = x.data() + nc * s.h * s.w;
        S* yp = out.data() + nc * s.h * s.w;
        for (std::int64_t y = 0; y < s.h; ++y) {
            for (std::int64_t xq = 0; xq < s.w; ++xq) {
                yp[y * s.w + xq] = xp[y * s.w + (s.w - 1 - xq)];
            }
        }
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, s](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            const S* g = nd.grad.data() + nc * s.h * s.w;
            S* gp = gx.data() + nc * s.h * s.w;
            for (std::int64_t y = 0; y < s.h; ++y) {
                for (std::int64_t xq = 0; xq < s.w; ++xq) {
                    gp[y * s.w + (s.w - 1 - xq)] += g[y * s.w + xq];
                }
            }
        }
    });
    return out;
}

template <typename S>
TensorT<S> flip_v(const TensorT<S>& x) {
    const Shape s = x.shape();
    TensorT<S> out = TensorT<S>::zeros(s);
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const S* xp = x.data() + nc * s.h * s.w;
        S* yp = out.data() + nc * s.h * s.w;
        for (std::int64_t y = 0; y < s.h; ++y) {
            std::memcpy(yp + y * s.w, xp + (s.h - 1 - y) * s.w,
                        sizeof(S) * static_cast<std::size_t>(s.w));
        }
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, s](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            const S* g = nd.grad.data() + nc * s.h * s.w;
            S* gp = gx.data() + nc * s.h * s.w;
            for (std::int64_t y = 0; y < s.h; ++y) {
                for (std::int64_t xq = 0; xq < s.w; ++xq) {
                    gp[(s.h - 1 - y) * s.w + xq] += g[y * s.w + xq];
                }
            }
        }
    });
    return out;
}

/// Rotate 90 degrees counter-clockwise, k times. Output of one rotation:
/// out(y, x) = in(x, W-1-y) with swapped spatial dims.
template <typename S>
TensorT<S> rot90(const TensorT<S>& x, int k) {
    k = ((k % 4) + 4) % 4;
    TensorT<S> cur = x;
    for (int it = 0; it < k; ++it) {
        const Shape s = cur.shape();
        const Shape os{s.n, s.c, s.w, s.h};
        TensorT<S> out = TensorT<S>::zeros(os);
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            const S* xp = cur.data() + nc * s.h * s.w;
            S* yp = out.data() + nc * os.h * os.w;
            for (std::int64_t y = 0; y < os.h; ++y) {
                for (std::int64_t xq = 0; xq < os.w; ++xq) {
                    yp[y * os.w + xq] = xp[xq * s.w + (s.w - 1 - y)];
                }
            }
        }
        auto xn = cur.node();
        record<S>(out, {xn}, [xn, s, os](detail::NodeT<S>& nd) {
            auto& gx = xn->grad_buf();
            for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
                const S* g = nd.grad.data() + nc * os.h * os.w;
                S* gp = gx.data() + nc * s.h * s.w;
                for (std::int64_t y = 0; y < os.h; ++y) {
                    for (std::int64_t xq = 0; xq < os.w; ++xq) {
                        gp[xq * s.w + (s.w - 1 - y)] += g[y * os.w + xq];
                    }
                }
            }
        });
        cur = out;
    }
    return cur;
}

/// Spatial crop: rows [y0, y0+h), cols [x0, x0+w).
template <typename S>
TensorT<S> crop(const TensorT<S>& x, std::int64_t y0, std::int64_t x0, std::int64_t h,
                std::int64_t w) {
    const Shape s = x.shape();
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > s.h || x0 + w > s.w) {
        throw DimensionError("crop: window [" + std::to_string(y0) + "," + std::to_string(x0) +
                             "]+" + std::to_string(h) + "x" + std::to_string(w) +
                             " outside tensor " + to_string(s));
    }
    const Shape os{s.n, s.c, h, w};
    TensorT<S> out = TensorT<S>::zeros(os);
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const S* xp = x.data() + nc * s.h * s.w;
        S* yp = out.data() + nc * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            std::memcpy(yp + y * w, xp + (y0 + y) * s.w + x0,
                        sizeof(S) * static_cast<std::size_t>(w));
        }
    }
    auto xn = x.node();
    record<S>(out, {xn}, [xn, s, y0, x0, h, w](detail::NodeT<S>& nd) {
        auto& gx = xn->grad_buf();
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            const S* g = nd.grad.data() + nc * h * w;
            S* gp = gx.data() + nc * s.h * s.w;
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t xq = 0; xq < w; ++xq) {
                    gp[(y0 + y) * s.w + x0 + xq] += g[y * w + xq];
                }
            }
        }
    });
    return out;
}

/// Clamp to [0,1]. Not differentiated: applied at image export only.
template <typename S>
TensorT<S> clamp01(const TensorT<S>& x) {
    const std::int64_t n = x.numel();
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        out.data()[i] = std::min(S(1), std::max(S(0), x.data()[i]));
    }
    return out;
}

} // namespace lkmn::ops
