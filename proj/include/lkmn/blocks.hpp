#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lkmn/ops.hpp"

namespace lkmn {

/// Hyperparameters shared by all blocks of one network, plus the ablation
/// switches exercised by the configuration surface (shuffle, attention,
/// scaler, gating, activation placement).
struct BlockConfig {
    int channels = 36;       // C
    int shuffle_group = 4;   // g
    int kernel_size = 31;    // K, odd
    int distill_channels = 18;
    int ca_hidden = 4;

    bool use_channel_shuffle = true;
    bool use_channel_attention = true;
    bool use_gamma = true;
    bool cross_gate = true;
    bool gelu_after_hfab_fuse = true;
    bool gelu_after_hfdb_fuse = true;

    /// Width of the squeeze-excite bottleneck for a given slice width.
    static int default_ca_hidden(int c, int g) {
        const int slice = c / g;
        const int h = (slice + 3) / 4;
        return h < 4 ? 4 : h;
    }

    /// Channels routed through the large-kernel path. g = 1 means all
    /// channels are processed and there is no bypass.
    int slice_channels() const {
        return shuffle_group == 1 ? channels : channels / shuffle_group;
    }

    void validate() const {
        std::string problems;
        auto fail = [&](const std::string& m) {
            if (!problems.empty()) problems += "; ";
            problems += m;
        };
        if (channels < 1) fail("channels must be >= 1");
        if (shuffle_group < 1) fail("shuffle_group must be >= 1");
        if (shuffle_group >= 1 && channels >= 1 && channels % shuffle_group != 0) {
            fail("channels " + std::to_string(channels) + " not divisible by shuffle_group " +
                 std::to_string(shuffle_group));
        }
        if (kernel_size < 1 || kernel_size % 2 == 0) {
            fail("kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
        }
        if (distill_channels < 1 || distill_channels > channels) {
            fail("distill_channels must be in [1, channels], got " +
                 std::to_string(distill_channels));
        }
        if (ca_hidden < 1) fail("ca_hidden must be >= 1");
        if (!problems.empty()) throw ConfigError("invalid block configuration: " + problems);
    }
};

/// Ordered named-tensor container. Insertion order is the canonical parameter
/// order (serialization, optimizer state slots); lookups are by name.
template <typename S>
class ParamStoreT {
public:
    TensorT<S>& add(const std::string& name, TensorT<S> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_.emplace(name, items_.size());
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return items_[it->second].second;
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return items_[it->second].second;
    }

    std::size_t size() const { return items_.size(); }
    const std::vector<std::pair<std::string, TensorT<S>>>& items() const { return items_; }
    std::vector<std::pair<std::string, TensorT<S>>>& items() { return items_; }

    std::int64_t total_elements() const {
        std::int64_t total = 0;
        for (const auto& [name, t] : items_) total += t.numel();
        return total;
    }

    void zero_grads() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    void set_trainable(bool on) {
        for (auto& [name, t] : items_) t.set_requires_grad(on);
    }

private:
    std::vector<std::pair<std::string, TensorT<S>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

namespace blocks {

// -- parameter registration --------------------------------------------------
//
// register_* walks a block's layers in a fixed order, creating one weight and
// one bias tensor per conv via the callback-provided initializer. The same
// walk order defines the on-disk manifest order.

template <typename S>
struct ParamInit {
    Rng* rng = nullptr; // null -> zero init (shape-only walks)

    TensorT<S> conv_weight(std::int64_t c_out, std::int64_t c_in_g, std::int64_t kh,
                           std::int64_t kw) const {
        const Shape s{c_out, c_in_g, kh, kw};
        TensorT<S> t = TensorT<S>::zeros(s);
        if (rng) {
            // Kaiming-uniform over fan-in
            const double fan_in = static_cast<double>(c_in_g * kh * kw);
            const double bound = std::sqrt(6.0 / fan_in);
            for (auto& v : t.values()) {
                v = static_cast<S>(rng->uniform(-bound, bound));
            }
        }
        return t;
    }

    TensorT<S> bias(std::int64_t c_out) const { return TensorT<S>::zeros({1, c_out, 1, 1}); }

    TensorT<S> gamma(std::int64_t c, double init) const {
        return TensorT<S>::full({1, c, 1, 1}, static_cast<S>(init));
    }
};

template <typename S>
void register_conv(ParamStoreT<S>& ps, const ParamInit<S>& init, const std::string& prefix,
                   std::int64_t c_out, std::int64_t c_in_g, std::int64_t kh, std::int64_t kw) {
    ps.add(prefix + ".weight", init.conv_weight(c_out, c_in_g, kh, kw));
    ps.add(prefix + ".bias", init.bias(c_out));
}

template <typename S>
void register_eplkb(ParamStoreT<S>& ps, const ParamInit<S>& init, const std::string& pfx,
                    const BlockConfig& cfg) {
    const int slice = cfg.slice_channels();
    if (cfg.use_channel_attention) {
        register_conv(ps, init, pfx + ".ca.down", cfg.ca_hidden, slice, 1, 1);
        register_conv(ps, init, pfx + ".ca.up", slice, cfg.ca_hidden, 1, 1);
    }
    register_conv(ps, init, pfx + ".strip_h", slice, 1, 1, cfg.kernel_size);
    register_conv(ps, init, pfx + ".strip_v", slice, 1, cfg.kernel_size, 1);
    register_conv(ps, init, pfx + ".fuse", cfg.channels, cfg.channels, 1, 1);
}

template <typename S>
void register_hfab(ParamStoreT<S>& ps, const ParamInit<S>& init, const std::string& pfx,
                   const BlockConfig& cfg) {
    register_conv(ps, init, pfx + ".dw3", cfg.channels, 1, 3, 3);
    register_eplkb(ps, init, pfx + ".eplkb", cfg);
    register_conv(ps, init, pfx + ".fuse", cfg.channels, 2 * cfg.channels, 1, 1);
}

template <typename S>
void register_hfdb(ParamStoreT<S>& ps, const ParamInit<S>& init, const std::string& pfx,
                   const BlockConfig& cfg) {
    for (int i = 0; i < 3; ++i) {
        const std::string stage = pfx + ".stage" + std::to_string(i);
        register_hfab(ps, init, stage + ".hfab", cfg);
        register_conv(ps, init, stage + ".distill", cfg.distill_channels, cfg.channels, 1, 1);
    }
    register_conv(ps, init, pfx + ".fuse", cfg.channels, 3 * cfg.distill_channels + cfg.channels,
                  1, 1);
}

template <typename S>
void register_cgfn(ParamStoreT<S>& ps, const ParamInit<S>& init, const std::string& pfx,
                   const BlockConfig& cfg, double gamma_init) {
    register_eplkb(ps, init, pfx + ".eplkb", cfg);
    register_conv(ps, init, pfx + ".dw3", cfg.channels, 1, 3, 3);
    if (cfg.use_gamma) {
        ps.add(pfx + ".gamma", init.gamma(cfg.channels, gamma_init));
    }
    register_conv(ps, init, pfx + ".fuse", cfg.channels, 2 * cfg.channels, 1, 1);
}

template <typename S>
void register_rfmg(ParamStoreT<S>& ps, const ParamInit<S>& init, const std::string& pfx,
                   const BlockConfig& cfg, double gamma_init) {
    register_hfdb(ps, init, pfx + ".hfdb", cfg);
    register_cgfn(ps, init, pfx + ".cgfn", cfg, gamma_init);
}

// -- forward graphs ----------------------------------------------------------

template <typename S>
ops::ConvParamsT<S> conv_at(const ParamStoreT<S>& ps, const std::string& prefix, int pad_h = 0,
                            int pad_w = 0, int groups = 1) {
    ops::ConvParamsT<S> p;
    p.weight = ps.at(prefix + ".weight");
    p.bias = ps.at(prefix + ".bias");
    p.pad_h = pad_h;
    p.pad_w = pad_w;
    p.groups = groups;
    return p;
}

template <typename S>
struct EplkbTrace {
    TensorT<S> shuffled;  // after channel shuffle
    TensorT<S> slice_out; // processed slice after attention + strips
    TensorT<S> bypass;    // untouched channels (undefined when g = 1)
    TensorT<S> output;
};

/// Shuffle, split off C/g channels, channel-attend and strip-convolve them,
/// re-concatenate with the untouched channels, fuse with a pointwise conv.
template <typename S>
EplkbTrace<S> eplkb_forward_traced(const TensorT<S>& x, const ParamStoreT<S>& ps,
                                   const std::string& pfx, const BlockConfig& cfg) {
    if (x.shape().c != cfg.channels) {
        throw DimensionError("eplkb: channel axis mismatch: input has " +
                             std::to_string(x.shape().c) + " channels, block expects " +
                             std::to_string(cfg.channels));
    }
    EplkbTrace<S> tr;
    const int slice_c = cfg.slice_channels();
    TensorT<S> t = cfg.use_channel_shuffle ? ops::channel_shuffle(x, cfg.shuffle_group) : x;
    tr.shuffled = t;

    TensorT<S> slice;
    if (cfg.shuffle_group == 1) {
        slice = t;
    } else {
        auto [head, tail] = ops::channel_split(t, slice_c);
        slice = head;
        tr.bypass = tail;
    }
    if (cfg.use_channel_attention) {
        TensorT<S> a = ops::global_avg_pool(slice);
        a = ops::conv2d(a, conv_at(ps, pfx + ".ca.down"));
        a = ops::relu(a);
        a = ops::conv2d(a, conv_at(ps, pfx + ".ca.up"));
        TensorT<S> gate = ops::sigmoid(a);
        slice = ops::scale_channels(slice, gate);
    }
    ops::ConvParamsT<S> ph = conv_at(ps, pfx + ".strip_h");
    TensorT<S> s1 = ops::strip_dwconv(slice, cfg.kernel_size, ops::StripOrientation::horizontal, ph);
    ops::ConvParamsT<S> pv = conv_at(ps, pfx + ".strip_v");
    TensorT<S> s2 = ops::strip_dwconv(s1, cfg.kernel_size, ops::StripOrientation::vertical, pv);
    tr.slice_out = s2;

    TensorT<S> cat = cfg.shuffle_group == 1 ? s2 : ops::concat_channels<S>({s2, tr.bypass});
    tr.output = ops::conv2d(cat, conv_at(ps, pfx + ".fuse"));
    return tr;
}

template <typename S>
TensorT<S> eplkb_forward(const TensorT<S>& x, const ParamStoreT<S>& ps, const std::string& pfx,
                         const BlockConfig& cfg) {
    return eplkb_forward_traced(x, ps, pfx, cfg).output;
}

/// Parallel local (depthwise 3x3) and non-local (EPLKB) branches fused by a
/// pointwise conv from 2C to C.
template <typename S>
TensorT<S> hfab_forward(const TensorT<S>& x, const ParamStoreT<S>& ps, const std::string& pfx,
                        const BlockConfig& cfg) {
    TensorT<S> local = ops::conv2d(x, conv_at(ps, pfx + ".dw3", 1, 1, cfg.channels));
    TensorT<S> nonlocal_ = eplkb_forward(x, ps, pfx + ".eplkb", cfg);
    TensorT<S> out =
        ops::conv2d(ops::concat_channels<S>({local, nonlocal_}), conv_at(ps, pfx + ".fuse"));
    if (cfg.gelu_after_hfab_fuse) out = ops::gelu(out);
    return out;
}

template <typename S>
struct HfdbTrace {
    TensorT<S> distilled[3]; // D-channel taps of each stage input
    TensorT<S> main[3];      // stage outputs
    TensorT<S> output;
};

/// Three chained HFAB stages; each stage also taps its input through a
/// pointwise distillation conv. The three taps plus the last main output are
/// concatenated and fused back to C channels.
template <typename S>
HfdbTrace<S> hfdb_forward_traced(const TensorT<S>& x, const ParamStoreT<S>& ps,
                                 const std::string& pfx, const BlockConfig& cfg) {
    HfdbTrace<S> tr;
    TensorT<S> prev = x;
    for (int i = 0; i < 3; ++i) {
        const std::string stage = pfx + ".stage" + std::to_string(i);
        tr.distilled[i] = ops::conv2d(prev, conv_at(ps, stage + ".distill"));
        tr.main[i] = hfab_forward(prev, ps, stage + ".hfab", cfg);
        prev = tr.main[i];
    }
    TensorT<S> cat =
        ops::concat_channels<S>({tr.distilled[0], tr.distilled[1], tr.distilled[2], tr.main[2]});
    tr.output = ops::conv2d(cat, conv_at(ps, pfx + ".fuse"));
    if (cfg.gelu_after_hfdb_fuse) tr.output = ops::gelu(tr.output);
    return tr;
}

template <typename S>
TensorT<S> hfdb_forward(const TensorT<S>& x, const ParamStoreT<S>& ps, const std::string& pfx,
                        const BlockConfig& cfg) {
    return hfdb_forward_traced(x, ps, pfx, cfg).output;
}

/// Gated fusion of the two feature branches: each branch is modulated by the
/// scaled discrepancy between the input and the *other* branch (cross-gate),
/// or its own discrepancy when cross gating is disabled.
template <typename S>
TensorT<S> cgfn_forward(const TensorT<S>& x, const ParamStoreT<S>& ps, const std::string& pfx,
                        const BlockConfig& cfg) {
    TensorT<S> feat_e = eplkb_forward(x, ps, pfx + ".eplkb", cfg);
    TensorT<S> feat_d = ops::conv2d(x, conv_at(ps, pfx + ".dw3", 1, 1, cfg.channels));
    TensorT<S> disc_e = ops::sub(x, feat_e);
    TensorT<S> disc_d = ops::sub(x, feat_d);
    if (cfg.use_gamma) {
        const TensorT<S>& gamma = ps.at(pfx + ".gamma");
        if (gamma.shape().c != cfg.channels) {
            throw ConfigError("cgfn: gamma length " + std::to_string(gamma.shape().c) +
                              " does not match channels " + std::to_string(cfg.channels));
        }
        disc_e = ops::scale_channels(disc_e, gamma);
        disc_d = ops::scale_channels(disc_d, gamma);
    }
    TensorT<S> out_e = cfg.cross_gate ? ops::mul(feat_e, disc_d) : ops::mul(feat_e, disc_e);
    TensorT<S> out_d = cfg.cross_gate ? ops::mul(feat_d, disc_e) : ops::mul(feat_d, disc_d);
    return ops::conv2d(ops::concat_channels<S>({out_e, out_d}), conv_at(ps, pfx + ".fuse"));
}

/// Residual body unit: x + HFDB, then + CGFN.
template <typename S>
TensorT<S> rfmg_forward(const TensorT<S>& x, const ParamStoreT<S>& ps, const std::string& pfx,
                        const BlockConfig& cfg, bool residual = true) {
    TensorT<S> h = hfdb_forward(x, ps, pfx + ".hfdb", cfg);
    TensorT<S> y = residual ? ops::add(x, h) : h;
    TensorT<S> c = cgfn_forward(y, ps, pfx + ".cgfn", cfg);
    return residual ? ops::add(y, c) : c;
}

} // namespace blocks
} // namespace lkmn
