// Shared test support: independent brute-force oracles (written against the
// operation definitions, not the library kernels) and a central-difference
// gradient checker running on the double-precision op set.
#pragma once

#include <cmath>
#include <vector>

#include "lkmn/ops.hpp"

namespace oracle {

// Direct sliding-window grouped cross-correlation, six nested loops, double
// accumulation. Independent of the production conv kernels.
inline std::vector<double> conv2d_ref(const std::vector<double>& x, const lkmn::Shape& xs,
                                      const std::vector<double>& w, const lkmn::Shape& ws,
                                      const std::vector<double>* bias, int stride, int ph, int pw,
                                      int groups, lkmn::Shape& os) {
    const std::int64_t cing = ws.c;
    const std::int64_t coutg = ws.n / groups;
    os.n = xs.n;
    os.c = ws.n;
    os.h = (xs.h + 2 * ph - ws.h) / stride + 1;
    os.w = (xs.w + 2 * pw - ws.w) / stride + 1;
    std::vector<double> y(static_cast<std::size_t>(os.numel()), 0.0);
    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t oc = 0; oc < os.c; ++oc) {
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    double acc = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
                    const std::int64_t gi = oc / coutg;
                    for (std::int64_t icg = 0; icg < cing; ++icg) {
                        for (std::int64_t ky = 0; ky < ws.h; ++ky) {
                            for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                                const std::int64_t iy = oy * stride - ph + ky;
                                const std::int64_t ix = ox * stride - pw + kx;
                                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                                const std::int64_t ic = gi * cing + icg;
                                acc += x[static_cast<std::size_t>(
                                           ((n * xs.c + ic) * xs.h + iy) * xs.w + ix)] *
                                       w[static_cast<std::size_t>(
                                           ((oc * cing + icg) * ws.h + ky) * ws.w + kx)];
                            }
                        }
                    }
                    y[static_cast<std::size_t>(((n * os.c + oc) * os.h + oy) * os.w + ox)] = acc;
                }
            }
        }
    }
    return y;
}

// Direct double-sum 2-D DFT of one plane (unnormalized, negative exponent).
inline void dft2_ref(const std::vector<double>& x, std::int64_t h, std::int64_t w,
                     std::vector<double>& re, std::vector<double>& im) {
    const double pi = 3.14159265358979323846;
    re.assign(static_cast<std::size_t>(h * w), 0.0);
    im.assign(static_cast<std::size_t>(h * w), 0.0);
    for (std::int64_t u = 0; u < h; ++u) {
        for (std::int64_t v = 0; v < w; ++v) {
            double rr = 0, ii = 0;
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t xq = 0; xq < w; ++xq) {
                    const double ang = 2.0 * pi *
                                       (static_cast<double>(u * y) / static_cast<double>(h) +
                                        static_cast<double>(v * xq) / static_cast<double>(w));
                    const double val = x[static_cast<std::size_t>(y * w + xq)];
                    rr += val * std::cos(ang);
                    ii -= val * std::sin(ang);
                }
            }
            re[static_cast<std::size_t>(u * w + v)] = rr;
            im[static_cast<std::size_t>(u * w + v)] = ii;
        }
    }
}

// Scalar reference of the published Adan recurrences: first moment of the
// gradient, moment of the gradient difference, second moment of the combined
// update, all bias-corrected; the first step treats the previous gradient as
// the current one. Parameters stay in float (storage precision), state in
// double.
struct AdanRef {
    double b1 = 0.98, b2 = 0.92, b3 = 0.99, eps = 1e-8;
    std::int64_t t = 0;
    std::vector<double> m, v, n, pg;

    void step(std::vector<float>& params, const std::vector<double>& g, double lr) {
        if (m.empty()) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
            n.assign(params.size(), 0.0);
            pg.assign(params.size(), 0.0);
        }
        const std::int64_t tt = t + 1;
        const double bc1 = 1.0 - std::pow(1.0 - b1, static_cast<double>(tt));
        const double bc2 = 1.0 - std::pow(1.0 - b2, static_cast<double>(tt));
        const double bc3 = 1.0 - std::pow(1.0 - b3, static_cast<double>(tt));
        for (std::size_t k = 0; k < params.size(); ++k) {
            const double diff = t == 0 ? 0.0 : g[k] - pg[k];
            m[k] = (1.0 - b1) * m[k] + b1 * g[k];
            v[k] = (1.0 - b2) * v[k] + b2 * diff;
            const double u = g[k] + (1.0 - b2) * diff;
            n[k] = (1.0 - b3) * n[k] + b3 * u * u;
            const double denom = std::sqrt(n[k] / bc3) + eps;
            params[k] = static_cast<float>(static_cast<double>(params[k]) -
                                           lr * (m[k] / bc1 + (1.0 - b2) * v[k] / bc2) / denom);
            pg[k] = g[k];
        }
        ++t;
    }
};

// Central-difference gradient check in double precision. Returns the largest
// relative error across all elements of all leaves. `make_loss` rebuilds the
// graph from the current leaf values and returns a scalar tensor.
template <typename MakeLoss>
double fd_check(const std::vector<lkmn::TensorT<double>*>& leaves, MakeLoss make_loss,
                double h = 1e-4) {
    for (auto* t : leaves) {
        t->set_requires_grad(true);
        t->zero_grad();
    }
    lkmn::TensorT<double> loss = make_loss();
    loss.backward();
    std::vector<std::vector<double>> ad;
    ad.reserve(leaves.size());
    for (auto* t : leaves) ad.push_back(t->grad());

    double max_err = 0.0;
    lkmn::NoGradGuard no_grad;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li]->values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double lp = make_loss().values()[0];
            vals[i] = orig - h;
            const double lm = make_loss().values()[0];
            vals[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double err = std::abs(fd - ad[li][i]) /
                               std::max({1.0, std::abs(fd), std::abs(ad[li][i])});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

template <typename S>
void fill_uniform(lkmn::TensorT<S>& t, lkmn::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.values()) v = static_cast<S>(rng.uniform(lo, hi));
}

template <typename S>
lkmn::TensorT<S> random_tensor(const lkmn::Shape& s, lkmn::Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
    lkmn::TensorT<S> t = lkmn::TensorT<S>::zeros(s);
    fill_uniform(t, rng, lo, hi);
    return t;
}

} // namespace oracle
