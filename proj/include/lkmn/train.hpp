#pragma once

#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

#include "lkmn/model.hpp"

namespace lkmn {

/// Optimizer / schedule / loss / sampling settings for one training run.
struct TrainConfig {
    std::int64_t iterations = 1000;
    int batch = 64;
    int lr_patch = 48;
    double lr_init = 5e-3;
    double lr_min = 1e-6;
    double fft_weight = 0.05;
    double l1_weight = 1.0;
    std::uint64_t seed = 0;
    int scale = 4;
    std::int64_t checkpoint_every = 100;
    bool augment = true;

    void validate() const {
        std::string problems;
        auto fail = [&](const std::string& m) {
            if (!problems.empty()) problems += "; ";
            problems += m;
        };
        if (iterations < 1) fail("iterations must be >= 1");
        if (batch < 1) fail("batch must be >= 1");
        if (lr_patch < 8) fail("lr_patch must be >= 8, got " + std::to_string(lr_patch));
        if (lr_min > lr_init) fail("lr_min must not exceed lr_init");
        if (scale < 1) fail("scale must be >= 1");
        if (!problems.empty()) throw ConfigError("invalid train configuration: " + problems);
    }

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Cosine annealing: lr_min + (lr_init - lr_min) * (1 + cos(pi*step/total)) / 2.
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr_init, double lr_min) {
    if (total < 1 || step < 0 || step > total) {
        throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0," +
                          std::to_string(total) + "]");
    }
    const double pi = 3.14159265358979323846;
    return lr_min + 0.5 * (lr_init - lr_min) *
                        (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total)));
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Mean absolute error.
template <typename S>
TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& gt) {
    return ops::mean_all(ops::abs_val(ops::sub(pred, gt)));
}

/// Frequency-domain L1: mean over all DFT coefficients of |dRe| + |dIm|.
/// With the unnormalized transform, the mean over the h*w coefficients of a
/// plane supplies the 1/(h*w) normalization that makes the magnitude
/// comparable to the pixel-domain L1 (a constant difference d costs |d|).
template <typename S>
TensorT<S> fft_loss(const TensorT<S>& pred, const TensorT<S>& gt) {
    ops::detail_ew::check_same_shape(pred, gt, "fft_loss");
    auto [pr, pi] = ops::fft2(pred);
    auto [gr, gi] = ops::fft2(gt);
    TensorT<S> re_term = ops::mean_all(ops::abs_val(ops::sub(pr, gr)));
    TensorT<S> im_term = ops::mean_all(ops::abs_val(ops::sub(pi, gi)));
    return ops::add(re_term, im_term);
}

// ---------------------------------------------------------------------------
// bicubic resampling
// ---------------------------------------------------------------------------

namespace detail_resize {

inline double cubic_kernel(double x) {
    const double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
    return 0.0;
}

struct AxisPlan {
    std::int64_t taps = 0;
    std::vector<std::int64_t> index; // out*taps source indices, edge-clamped
    std::vector<double> weight;      // out*taps weights, normalized per output
};

/// Sampling plan for one axis. When downscaling, the kernel is widened by the
/// inverse scale (antialiasing). Coordinates are edge-clamped and each output
/// pixel's weights are normalized to sum to one.
inline AxisPlan make_axis_plan(std::int64_t in, std::int64_t out) {
    AxisPlan plan;
    const double scale = static_cast<double>(out) / static_cast<double>(in);
    const double kscale = scale < 1.0 ? scale : 1.0;
    const double kwidth = 4.0 / kscale;
    plan.taps = static_cast<std::int64_t>(std::ceil(kwidth)) + 2;
    plan.index.resize(static_cast<std::size_t>(out * plan.taps));
    plan.weight.resize(static_cast<std::size_t>(out * plan.taps));
    for (std::int64_t i = 0; i < out; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / scale - 0.5;
        const std::int64_t left = static_cast<std::int64_t>(std::floor(u - kwidth / 2.0)) + 1;
        double sum = 0.0;
        for (std::int64_t t = 0; t < plan.taps; ++t) {
            const std::int64_t j = left + t;
            const double w = kscale * cubic_kernel(kscale * (u - static_cast<double>(j)));
            plan.weight[static_cast<std::size_t>(i * plan.taps + t)] = w;
            plan.index[static_cast<std::size_t>(i * plan.taps + t)] =
                std::min(in - 1, std::max<std::int64_t>(0, j));
            sum += w;
        }
        if (sum != 0.0) {
            for (std::int64_t t = 0; t < plan.taps; ++t) {
                plan.weight[static_cast<std::size_t>(i * plan.taps + t)] /= sum;
            }
        }
    }
    return plan;
}

} // namespace detail_resize

/// Separable cubic resampling (a = -0.5) with antialiasing on downscale and
/// edge clamping. Operates on plane stacks of any channel count; no tape.
template <typename S>
TensorT<S> bicubic_resize(const TensorT<S>& x, std::int64_t out_h, std::int64_t out_w) {
    const Shape s = x.shape();
    if (out_h < 1 || out_w < 1) throw ConfigError("bicubic_resize: output size must be positive");
    const detail_resize::AxisPlan wplan = detail_resize::make_axis_plan(s.w, out_w);
    const detail_resize::AxisPlan hplan = detail_resize::make_axis_plan(s.h, out_h);

    // horizontal pass
    TensorT<S> mid = TensorT<S>::zeros({s.n, s.c, s.h, out_w});
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const S* xp = x.data() + nc * s.h * s.w;
        S* mp = mid.data() + nc * s.h * out_w;
        for (std::int64_t y = 0; y < s.h; ++y) {
            for (std::int64_t i = 0; i < out_w; ++i) {
                double acc = 0.0;
                for (std::int64_t t = 0; t < wplan.taps; ++t) {
                    const std::size_t k = static_cast<std::size_t>(i * wplan.taps + t);
                    acc += wplan.weight[k] * static_cast<double>(xp[y * s.w + wplan.index[k]]);
                }
                mp[y * out_w + i] = static_cast<S>(acc);
            }
        }
    }
    // vertical pass
    TensorT<S> out = TensorT<S>::zeros({s.n, s.c, out_h, out_w});
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const S* mp = mid.data() + nc * s.h * out_w;
        S* op = out.data() + nc * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
            for (std::int64_t xq = 0; xq < out_w; ++xq) {
                double acc = 0.0;
                for (std::int64_t t = 0; t < hplan.taps; ++t) {
                    const std::size_t k = static_cast<std::size_t>(i * hplan.taps + t);
                    acc += hplan.weight[k] * static_cast<double>(mp[hplan.index[k] * out_w + xq]);
                }
                op[i * out_w + xq] = static_cast<S>(acc);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset and sampling
// ---------------------------------------------------------------------------

struct SrDataset {
    struct Item {
        std::string name;
        Tensor hr; // (1,3,H,W) in [0,1], mod-cropped to a multiple of scale
        Tensor lr; // (1,3,H/scale,W/scale)
    };
    std::vector<Item> items;
    int scale = 0;

    /// Load paired HR/LR images. HR PNGs come from hr_dir; LR images are read
    /// from lr_dir when it exists (matching filenames), otherwise generated
    /// with bicubic_resize and cached there as PNGs.
    static SrDataset load(const std::string& hr_dir, int scale, const std::string& lr_dir = "",
                          bool cache_lr = true, std::ostream* log = nullptr);
};

/// Lossless augmentation: k*90-degree rotation plus horizontal/vertical flips.
struct Augment {
    int rot = 0; // 0..3 quarter turns
    bool hflip = false;
    bool vflip = false;
};

inline Augment sample_augment(Rng& rng) {
    Augment a;
    a.rot = static_cast<int>(rng.uniform_int(4));
    a.hflip = rng.uniform_int(2) != 0;
    a.vflip = rng.uniform_int(2) != 0;
    return a;
}

template <typename S>
TensorT<S> apply_augment(const TensorT<S>& x, const Augment& a) {
    TensorT<S> t = x;
    if (a.hflip) t = ops::flip_h(t);
    if (a.vflip) t = ops::flip_v(t);
    if (a.rot) t = ops::rot90(t, a.rot);
    return t;
}

struct SampleDraw {
    std::size_t item = 0;
    std::int64_t y0 = 0; // LR crop origin
    std::int64_t x0 = 0;
    Augment aug;
};

/// Items whose LR plane fits the crop; smaller images are skipped (with a
/// warning on `warn` once per call).
std::vector<std::size_t> usable_items(const SrDataset& ds, int lr_patch, std::ostream* warn);

SampleDraw draw_sample(const SrDataset& ds, const std::vector<std::size_t>& usable,
                       const TrainConfig& cfg, Rng& rng);

/// Aligned random LR/HR crop pairs with identical augmentation; deterministic
/// under the rng state. Returns (lr, hr) batches.
std::pair<Tensor, Tensor> sample_batch(const SrDataset& ds, const TrainConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adan with bias-corrected first moment, gradient-difference moment and
/// second moment. State is kept in double for reproducible accumulation; the
/// first step treats the previous gradient as the current one.
class AdanOptimizer {
public:
    struct Config {
        double beta1 = 0.98;
        double beta2 = 0.92;
        double beta3 = 0.99;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdanOptimizer() = default;
    explicit AdanOptimizer(Config cfg) : cfg_(cfg) {}

    /// One update over every parameter's grad buffer. Returns false (and
    /// leaves all state and parameters untouched) if any gradient is
    /// non-finite.
    bool step(ParamStore& params, double lr);

    std::int64_t step_count() const { return step_; }
    const Config& config() const { return cfg_; }

    /// Sidecar checkpoint: optimizer state plus the next training iteration.
    void save_state(const std::string& path, std::int64_t next_iter) const;
    /// Restores state; validates slot sizes against `params`. Returns next_iter.
    std::int64_t load_state(const std::string& path, const ParamStore& params);

private:
    struct Slot {
        std::vector<double> m, v, n, prev_g;
    };
    void ensure_slots(const ParamStore& params);

    Config cfg_;
    std::int64_t step_ = 0;
    std::vector<Slot> slots_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainLogRecord {
    std::int64_t iter = 0;
    double l1 = 0;
    double fft = 0;
    double total = 0;
    double lr = 0;
};

struct TrainResult {
    std::int64_t completed_iters = 0;
    bool aborted_non_finite = false;
    std::string last_checkpoint; // empty if none written
    double first_total = 0;
    double final_total = 0;
    double first_l1 = 0;
    double final_l1 = 0;
};

/// Iterates sample -> forward -> l1_weight*L1 + fft_weight*FFT -> backward ->
/// Adan with cosine-annealed lr. Emits one JSON line per iteration to `log`
/// ({iter, l1, fft, total, lr}) and checkpoints the weight store (plus
/// optimizer sidecar) every checkpoint_every iterations into out_dir. A
/// non-finite loss aborts, retaining the last-good checkpoint.
TrainResult train_loop(Model& model, const SrDataset& ds, const TrainConfig& cfg,
                       const std::string& out_dir, AdanOptimizer& opt,
                       std::int64_t start_iter = 0, std::ostream* log = nullptr);

} // namespace lkmn
