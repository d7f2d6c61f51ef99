#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <json.hpp>

#include "lkmn/blocks.hpp"

namespace lkmn {

/// Full architecture description. The two published sizes are available as
/// presets; every ablation axis is an explicit field so variant networks are
/// plain configuration.
struct ModelConfig {
    int scale = 4; // 2 | 3 | 4
    int channels = 36;
    int num_rfmg = 8;
    int shuffle_group = 4;
    int kernel_size = 31;
    int distill_channels = 18;
    int ca_hidden = 4;

    bool use_channel_shuffle = true;
    bool use_channel_attention = true;
    bool use_gamma = true;
    bool cross_gate = true;
    bool gelu_after_hfab_fuse = true;
    bool gelu_after_hfdb_fuse = true;
    bool rfmg_residual = true;
    bool long_skip = false;

    static ModelConfig lkmn(int scale);
    static ModelConfig lkmn_l(int scale);
    /// Presets: lkmn-x2|x3|x4, lkmn-l-x2|x3|x4.
    static ModelConfig preset(const std::string& name);

    BlockConfig block() const {
        BlockConfig b;
        b.channels = channels;
        b.shuffle_group = shuffle_group;
        b.kernel_size = kernel_size;
        b.distill_channels = distill_channels;
        b.ca_hidden = ca_hidden;
        b.use_channel_shuffle = use_channel_shuffle;
        b.use_channel_attention = use_channel_attention;
        b.use_gamma = use_gamma;
        b.cross_gate = cross_gate;
        b.gelu_after_hfab_fuse = gelu_after_hfab_fuse;
        b.gelu_after_hfdb_fuse = gelu_after_hfdb_fuse;
        return b;
    }

    /// Throws ConfigError listing every violation at once.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Initial value of the learnable scaler.
inline constexpr double kGammaInit = 1e-5;

/// All learnable parameters of one model plus the metadata needed to rebuild
/// and validate it: the config snapshot and the creation seed.
template <typename S>
struct WeightStoreT {
    ModelConfig config;
    std::uint64_t seed = 0;
    ParamStoreT<S> params;
};

using WeightStore = WeightStoreT<float>;

/// Create all parameters for a config in canonical order. A null rng yields
/// zero-filled tensors (used for shape manifests and load validation).
template <typename S>
ParamStoreT<S> build_param_store(const ModelConfig& cfg, Rng* rng) {
    ParamStoreT<S> ps;
    blocks::ParamInit<S> init{rng};
    blocks::register_conv(ps, init, "shallow", cfg.channels, 3, 3, 3);
    for (int i = 0; i < cfg.num_rfmg; ++i) {
        blocks::register_rfmg(ps, init, "rfmg" + std::to_string(i), cfg.block(), kGammaInit);
    }
    const std::int64_t head_out = 3LL * cfg.scale * cfg.scale;
    blocks::register_conv(ps, init, "head", head_out, cfg.channels, 3, 3);
    return ps;
}

/// The assembled network: shallow 3x3 conv, num_rfmg residual groups, 3x3
/// reconstruction conv, sub-pixel upscale. Inputs are (n, 3, h, w) in [0,1];
/// outputs are (n, 3, h*scale, w*scale), unclamped.
template <typename S>
class ModelT {
public:
    ModelT() = default;

    static ModelT build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        ModelT m;
        m.store_.config = cfg;
        m.store_.seed = seed;
        m.store_.params = build_param_store<S>(cfg, &rng);
        m.store_.params.set_trainable(true);
        return m;
    }

    /// Adopt an existing weight store, validating every tensor against the
    /// shapes the config dictates.
    explicit ModelT(WeightStoreT<S> store) : store_(std::move(store)) {
        store_.config.validate();
        ParamStoreT<S> expected = build_param_store<S>(store_.config, nullptr);
        if (expected.size() != store_.params.size()) {
            throw CompatibilityError("weight store holds " + std::to_string(store_.params.size()) +
                                     " tensors, config requires " +
                                     std::to_string(expected.size()));
        }
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto& [ename, etensor] = expected.items()[i];
            const auto& [gname, gtensor] = store_.params.items()[i];
            if (ename != gname) {
                throw CompatibilityError("weight store tensor '" + gname + "' at position " +
                                         std::to_string(i) + ", expected '" + ename + "'");
            }
            if (!(etensor.shape() == gtensor.shape())) {
                throw CompatibilityError("tensor '" + gname + "' has shape " +
                                         to_string(gtensor.shape()) + ", config requires " +
                                         to_string(etensor.shape()));
            }
        }
        store_.params.set_trainable(true);
    }

    TensorT<S> forward(const TensorT<S>& lr) const {
        if (lr.shape().c != 3) {
            throw DimensionError("model forward: channel axis must be 3 (RGB), got " +
                                 std::to_string(lr.shape().c));
        }
        const ModelConfig& cfg = store_.config;
        const ParamStoreT<S>& ps = store_.params;
        TensorT<S> shallow = ops::conv2d(lr, blocks::conv_at(ps, "shallow", 1, 1));
        TensorT<S> body = shallow;
        for (int i = 0; i < cfg.num_rfmg; ++i) {
            body = blocks::rfmg_forward(body, ps, "rfmg" + std::to_string(i), cfg.block(),
                                        cfg.rfmg_residual);
        }
        if (cfg.long_skip) body = ops::add(body, shallow);
        TensorT<S> recon = ops::conv2d(body, blocks::conv_at(ps, "head", 1, 1));
        return ops::pixel_shuffle(recon, cfg.scale);
    }

    const ModelConfig& config() const { return store_.config; }
    std::uint64_t seed() const { return store_.seed; }
    ParamStoreT<S>& params() { return store_.params; }
    const ParamStoreT<S>& params() const { return store_.params; }
    WeightStoreT<S>& store() { return store_; }
    const WeightStoreT<S>& store() const { return store_; }

private:
    WeightStoreT<S> store_;
};

using Model = ModelT<float>;

template <typename To, typename From>
WeightStoreT<To> convert_store(const WeightStoreT<From>& in) {
    WeightStoreT<To> out;
    out.config = in.config;
    out.seed = in.seed;
    for (const auto& [name, t] : in.params.items()) {
        std::vector<To> data(t.values().begin(), t.values().end());
        out.params.add(name, TensorT<To>::from_data(t.shape(), std::move(data)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// complexity accounting
// ---------------------------------------------------------------------------

/// Parameter and FLOP totals with a shallow/body/head breakdown. Convention:
/// one multiply-accumulate = one FLOP; a conv costs out_h*out_w*c_out*
/// (c_in_per_group*k_h*k_w + 1) with the +1 covering the bias add; elementwise
/// ops cost one FLOP per element at their operating resolution. Everything
/// runs at LR resolution (the sub-pixel rearrangement is free).
struct Complexity {
    std::int64_t params_shallow = 0;
    std::int64_t params_per_rfmg = 0;
    std::int64_t params_body = 0;
    std::int64_t params_head = 0;
    std::int64_t params_total = 0;
    std::int64_t flops_shallow = 0;
    std::int64_t flops_per_rfmg = 0;
    std::int64_t flops_body = 0;
    std::int64_t flops_head = 0;
    std::int64_t flops_total = 0;
    std::int64_t lr_h = 0;
    std::int64_t lr_w = 0;
};

/// out_h/out_w are the HR output size; the LR operating size is the ceiling
/// of out/scale, so non-divisible report sizes are accepted.
Complexity complexity(const ModelConfig& cfg, std::int64_t out_h, std::int64_t out_w);

std::int64_t count_params(const ModelConfig& cfg);
std::int64_t count_flops(const ModelConfig& cfg, std::int64_t out_h, std::int64_t out_w);

std::int64_t conv_param_count(std::int64_t c_out, std::int64_t c_in_g, std::int64_t kh,
                              std::int64_t kw, bool bias = true);
std::int64_t conv_flop_count(std::int64_t c_out, std::int64_t c_in_g, std::int64_t kh,
                             std::int64_t kw, std::int64_t oh, std::int64_t ow, bool bias = true);

// ---------------------------------------------------------------------------
// weight serialization
// ---------------------------------------------------------------------------
//
// File layout: magic "LKMN", version byte 0x01, u32 little-endian header
// length, UTF-8 JSON header {config, seed, manifest:[{name, shape, offset,
// len}]}, payload of raw little-endian f32 in manifest order (offset =
// byte offset into the payload, len = element count), u32 little-endian
// CRC32 of the payload. Round trips are bit-exact.

void save_weights(const WeightStore& ws, const std::string& path);
WeightStore load_weights(const std::string& path);

// ---------------------------------------------------------------------------
// inference conveniences
// ---------------------------------------------------------------------------

/// Average the 8 dihedral-transformed predictions of a single image. `fwd`
/// is any upscaling operator on (1, c, h, w) tensors.
template <typename S>
TensorT<S> self_ensemble_forward(const std::function<TensorT<S>(const TensorT<S>&)>& fwd,
                                 const TensorT<S>& lr) {
    if (lr.shape().n != 1) {
        throw ContractError("self_ensemble_forward expects a single image, got batch " +
                            std::to_string(lr.shape().n));
    }
    TensorT<S> acc;
    for (int f = 0; f < 2; ++f) {
        for (int k = 0; k < 4; ++k) {
            TensorT<S> t = f ? ops::flip_h(lr) : lr;
            t = ops::rot90(t, k);
            TensorT<S> y = fwd(t);
            y = ops::rot90(y, 4 - k);
            if (f) y = ops::flip_h(y);
            acc = acc.defined() ? ops::add(acc, y) : y;
        }
    }
    return ops::mul_scalar(acc, S(1) / S(8));
}

template <typename S>
TensorT<S> self_ensemble_forward(const ModelT<S>& model, const TensorT<S>& lr) {
    return self_ensemble_forward<S>([&model](const TensorT<S>& t) { return model.forward(t); },
                                    lr);
}

/// Memory-bounded inference: run `fwd` on overlapping tiles and stitch the
/// center crops. Exact on interior pixels when overlap covers the receptive
/// radius; approximate near seams otherwise. Not differentiated.
template <typename S>
TensorT<S> tile_forward(const std::function<TensorT<S>(const TensorT<S>&)>& fwd,
                        const TensorT<S>& lr, int tile, int overlap, int scale) {
    if (overlap < 0) throw ConfigError("tile_forward: overlap must be >= 0");
    if (tile <= 2 * overlap) {
        throw ConfigError("tile_forward: tile " + std::to_string(tile) +
                          " must exceed twice the overlap " + std::to_string(overlap));
    }
    const Shape s = lr.shape();
    if (tile >= s.h && tile >= s.w) return fwd(lr);

    const std::int64_t core = tile - 2 * overlap;
    const std::int64_t r = scale;
    TensorT<S> out;
    for (std::int64_t cy0 = 0; cy0 < s.h; cy0 += core) {
        const std::int64_t cy1 = std::min(cy0 + core, s.h);
        const std::int64_t py0 = std::max<std::int64_t>(0, cy0 - overlap);
        const std::int64_t py1 = std::min(s.h, cy1 + overlap);
        for (std::int64_t cx0 = 0; cx0 < s.w; cx0 += core) {
            const std::int64_t cx1 = std::min(cx0 + core, s.w);
            const std::int64_t px0 = std::max<std::int64_t>(0, cx0 - overlap);
            const std::int64_t px1 = std::min(s.w, cx1 + overlap);
            TensorT<S> patch = ops::crop(lr, py0, px0, py1 - py0, px1 - px0);
            TensorT<S> y = fwd(patch);
            if (y.shape().h != (py1 - py0) * r || y.shape().w != (px1 - px0) * r) {
                throw ContractError("tile_forward: operator scale does not match " +
                                    std::to_string(scale));
            }
            if (!out.defined()) {
                out = TensorT<S>::zeros({s.n, y.shape().c, s.h * r, s.w * r});
            }
            const Shape os = out.shape();
            for (std::int64_t nc = 0; nc < os.n * os.c; ++nc) {
                const S* yp = y.data() + nc * y.shape().h * y.shape().w;
                S* op = out.data() + nc * os.h * os.w;
                for (std::int64_t yy = cy0 * r; yy < cy1 * r; ++yy) {
                    const S* srcrow = yp + (yy - py0 * r) * y.shape().w + (cx0 - px0) * r;
                    S* dstrow = op + yy * os.w + cx0 * r;
                    std::memcpy(dstrow, srcrow,
                                sizeof(S) * static_cast<std::size_t>((cx1 - cx0) * r));
                }
            }
        }
    }
    return out;
}

template <typename S>
TensorT<S> tile_forward(const ModelT<S>& model, const TensorT<S>& lr, int tile, int overlap) {
    return tile_forward<S>([&model](const TensorT<S>& t) { return model.forward(t); }, lr, tile,
                           overlap, model.config().scale);
}

} // namespace lkmn
