#include "lkmn/model.hpp"

namespace lkmn {

ModelConfig ModelConfig::lkmn(int scale) {
    ModelConfig c;
    c.scale = scale;
    c.channels = 36;
    c.num_rfmg = 8;
    c.shuffle_group = 4;
    c.kernel_size = 31;
    c.distill_channels = 18;
    c.ca_hidden = BlockConfig::default_ca_hidden(36, 4);
    return c;
}

ModelConfig ModelConfig::lkmn_l(int scale) {
    ModelConfig c;
    c.scale = scale;
    c.channels = 64;
    c.num_rfmg = 12;
    c.shuffle_group = 4;
    c.kernel_size = 31;
    c.distill_channels = 32;
    c.ca_hidden = BlockConfig::default_ca_hidden(64, 4);
    return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "lkmn-x2") return lkmn(2);
    if (name == "lkmn-x3") return lkmn(3);
    if (name == "lkmn-x4") return lkmn(4);
    if (name == "lkmn-l-x2") return lkmn_l(2);
    if (name == "lkmn-l-x3") return lkmn_l(3);
    if (name == "lkmn-l-x4") return lkmn_l(4);
    throw ConfigError("unknown preset '" + name +
                      "' (expected lkmn-x2|x3|x4 or lkmn-l-x2|x3|x4)");
}

void ModelConfig::validate() const {
    std::string problems;
    auto fail = [&](const std::string& m) {
        if (!problems.empty()) problems += "; ";
        problems += m;
    };
    if (scale != 2 && scale != 3 && scale != 4) {
        fail("scale must be 2, 3 or 4, got " + std::to_string(scale));
    }
    if (num_rfmg < 0) fail("num_rfmg must be >= 0, got " + std::to_string(num_rfmg));
    if (channels < 1) fail("channels must be >= 1");
    if (shuffle_group < 1) {
        fail("shuffle_group must be >= 1");
    } else if (channels >= 1 && channels % shuffle_group != 0) {
        fail("channels " + std::to_string(channels) + " not divisible by shuffle_group " +
             std::to_string(shuffle_group));
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        fail("kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
    }
    if (distill_channels < 1 || distill_channels > channels) {
        fail("distill_channels must be in [1, channels], got " + std::to_string(distill_channels));
    }
    if (ca_hidden < 1) fail("ca_hidden must be >= 1");
    if (!problems.empty()) throw ConfigError("invalid model configuration: " + problems);
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{
        {"scale", scale},
        {"channels", channels},
        {"num_rfmg", num_rfmg},
        {"shuffle_group", shuffle_group},
        {"kernel_size", kernel_size},
        {"distill_channels", distill_channels},
        {"ca_hidden", ca_hidden},
        {"use_channel_shuffle", use_channel_shuffle},
        {"use_channel_attention", use_channel_attention},
        {"use_gamma", use_gamma},
        {"cross_gate", cross_gate},
        {"gelu_after_hfab_fuse", gelu_after_hfab_fuse},
        {"gelu_after_hfdb_fuse", gelu_after_hfdb_fuse},
        {"rfmg_residual", rfmg_residual},
        {"long_skip", long_skip},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.scale = j.value("scale", c.scale);
    c.channels = j.value("channels", c.channels);
    c.num_rfmg = j.value("num_rfmg", c.num_rfmg);
    c.shuffle_group = j.value("shuffle_group", c.shuffle_group);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    const int derived_distill = c.channels >= 2 ? c.channels / 2 : 1;
    c.distill_channels = j.value("distill_channels", derived_distill);
    c.ca_hidden =
        j.value("ca_hidden", BlockConfig::default_ca_hidden(c.channels, c.shuffle_group));
    c.use_channel_shuffle = j.value("use_channel_shuffle", c.use_channel_shuffle);
    c.use_channel_attention = j.value("use_channel_attention", c.use_channel_attention);
    c.use_gamma = j.value("use_gamma", c.use_gamma);
    c.cross_gate = j.value("cross_gate", c.cross_gate);
    c.gelu_after_hfab_fuse = j.value("gelu_after_hfab_fuse", c.gelu_after_hfab_fuse);
    c.gelu_after_hfdb_fuse = j.value("gelu_after_hfdb_fuse", c.gelu_after_hfdb_fuse);
    c.rfmg_residual = j.value("rfmg_residual", c.rfmg_residual);
    c.long_skip = j.value("long_skip", c.long_skip);
    return c;
}

std::int64_t conv_param_count(std::int64_t c_out, std::int64_t c_in_g, std::int64_t kh,
                              std::int64_t kw, bool bias) {
    return c_out * c_in_g * kh * kw + (bias ? c_out : 0);
}

std::int64_t conv_flop_count(std::int64_t c_out, std::int64_t c_in_g, std::int64_t kh,
                             std::int64_t kw, std::int64_t oh, std::int64_t ow, bool bias) {
    return oh * ow * c_out * (c_in_g * kh * kw + (bias ? 1 : 0));
}

namespace {

struct BlockCosts {
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

// Layer-by-layer account of one EPLKB at operating size P = h*w pixels.
BlockCosts eplkb_costs(const ModelConfig& c, std::int64_t P) {
    const std::int64_t C = c.channels;
    const std::int64_t slice = c.shuffle_group == 1 ? C : C / c.shuffle_group;
    const std::int64_t hid = c.ca_hidden;
    const std::int64_t K = c.kernel_size;
    BlockCosts b;
    if (c.use_channel_attention) {
        b.params += conv_param_count(hid, slice, 1, 1) + conv_param_count(slice, hid, 1, 1);
        b.flops += slice * (P + 1);                    // pool: adds + divide
        b.flops += conv_flop_count(hid, slice, 1, 1, 1, 1) + hid; // down + relu
        b.flops += conv_flop_count(slice, hid, 1, 1, 1, 1) + slice; // up + sigmoid
        b.flops += slice * P;                          // gate multiply
    }
    b.params += 2 * conv_param_count(slice, 1, 1, K); // both strips
    b.flops += 2 * conv_flop_count(slice, 1, 1, K, 1, 1) * P;
    b.params += conv_param_count(C, C, 1, 1);
    b.flops += conv_flop_count(C, C, 1, 1, 1, 1) * P;
    return b;
}

BlockCosts hfab_costs(const ModelConfig& c, std::int64_t P) {
    const std::int64_t C = c.channels;
    BlockCosts b = eplkb_costs(c, P);
    b.params += conv_param_count(C, 1, 3, 3);
    b.flops += conv_flop_count(C, 1, 3, 3, 1, 1) * P;
    b.params += conv_param_count(C, 2 * C, 1, 1);
    b.flops += conv_flop_count(C, 2 * C, 1, 1, 1, 1) * P;
    if (c.gelu_after_hfab_fuse) b.flops += C * P;
    return b;
}

BlockCosts hfdb_costs(const ModelConfig& c, std::int64_t P) {
    const std::int64_t C = c.channels;
    const std::int64_t D = c.distill_channels;
    BlockCosts hfab = hfab_costs(c, P);
    BlockCosts b;
    b.params += 3 * hfab.params + 3 * conv_param_count(D, C, 1, 1);
    b.flops += 3 * hfab.flops + 3 * conv_flop_count(D, C, 1, 1, 1, 1) * P;
    b.params += conv_param_count(C, 3 * D + C, 1, 1);
    b.flops += conv_flop_count(C, 3 * D + C, 1, 1, 1, 1) * P;
    if (c.gelu_after_hfdb_fuse) b.flops += C * P;
    return b;
}

BlockCosts cgfn_costs(const ModelConfig& c, std::int64_t P) {
    const std::int64_t C = c.channels;
    BlockCosts b = eplkb_costs(c, P);
    b.params += conv_param_count(C, 1, 3, 3);
    b.flops += conv_flop_count(C, 1, 3, 3, 1, 1) * P;
    b.flops += 2 * C * P; // discrepancy subtractions
    if (c.use_gamma) {
        b.params += C;
        b.flops += 2 * C * P; // scaler applied to both branches
    }
    b.flops += 2 * C * P; // gating products
    b.params += conv_param_count(C, 2 * C, 1, 1);
    b.flops += conv_flop_count(C, 2 * C, 1, 1, 1, 1) * P;
    return b;
}

BlockCosts rfmg_costs(const ModelConfig& c, std::int64_t P) {
    BlockCosts h = hfdb_costs(c, P);
    BlockCosts g = cgfn_costs(c, P);
    BlockCosts b{h.params + g.params, h.flops + g.flops};
    if (c.rfmg_residual) b.flops += 2 * c.channels * P;
    return b;
}

} // namespace

Complexity complexity(const ModelConfig& cfg, std::int64_t out_h, std::int64_t out_w) {
    cfg.validate();
    if (out_h < 1 || out_w < 1) throw ConfigError("complexity: output size must be positive");
    Complexity cx;
    cx.lr_h = (out_h + cfg.scale - 1) / cfg.scale;
    cx.lr_w = (out_w + cfg.scale - 1) / cfg.scale;
    const std::int64_t P = cx.lr_h * cx.lr_w;
    const std::int64_t C = cfg.channels;
    const std::int64_t head_out = 3LL * cfg.scale * cfg.scale;

    cx.params_shallow = conv_param_count(C, 3, 3, 3);
    cx.flops_shallow = conv_flop_count(C, 3, 3, 3, 1, 1) * P;

    const BlockCosts rfmg = rfmg_costs(cfg, P);
    cx.params_per_rfmg = rfmg.params;
    cx.flops_per_rfmg = rfmg.flops;
    cx.params_body = rfmg.params * cfg.num_rfmg;
    cx.flops_body = rfmg.flops * cfg.num_rfmg;
    if (cfg.long_skip) cx.flops_body += C * P;

    cx.params_head = conv_param_count(head_out, C, 3, 3);
    cx.flops_head = conv_flop_count(head_out, C, 3, 3, 1, 1) * P;

    cx.params_total = cx.params_shallow + cx.params_body + cx.params_head;
    cx.flops_total = cx.flops_shallow + cx.flops_body + cx.flops_head;
    return cx;
}

std::int64_t count_params(const ModelConfig& cfg) {
    return complexity(cfg, cfg.scale, cfg.scale).params_total;
}

std::int64_t count_flops(const ModelConfig& cfg, std::int64_t out_h, std::int64_t out_w) {
    return complexity(cfg, out_h, out_w).flops_total;
}

} // namespace lkmn
