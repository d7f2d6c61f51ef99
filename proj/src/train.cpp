#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <zlib.h>

#include "lkmn/image_io.hpp"
#include "lkmn/train.hpp"

namespace fs = std::filesystem;

namespace lkmn {

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{
        {"iterations", iterations},
        {"batch", batch},
        {"lr_patch", lr_patch},
        {"lr_init", lr_init},
        {"lr_min", lr_min},
        {"fft_weight", fft_weight},
        {"l1_weight", l1_weight},
        {"seed", seed},
        {"scale", scale},
        {"checkpoint_every", checkpoint_every},
        {"augment", augment},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.batch = j.value("batch", c.batch);
    c.lr_patch = j.value("lr_patch", c.lr_patch);
    c.lr_init = j.value("lr_init", c.lr_init);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.fft_weight = j.value("fft_weight", c.fft_weight);
    c.l1_weight = j.value("l1_weight", c.l1_weight);
    c.seed = j.value("seed", c.seed);
    c.scale = j.value("scale", c.scale);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.augment = j.value("augment", c.augment);
    return c;
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

SrDataset SrDataset::load(const std::string& hr_dir, int scale, const std::string& lr_dir,
                          bool cache_lr, std::ostream* log) {
    if (scale < 1) throw ConfigError("dataset scale must be >= 1");
    if (!fs::is_directory(hr_dir)) throw IoError("dataset directory '" + hr_dir + "' not found");

    std::string lr_path = lr_dir;
    if (lr_path.empty()) {
        lr_path = (fs::path(hr_dir) / ("LRx" + std::to_string(scale))).string();
    }

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(hr_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            names.push_back(entry.path().filename().string());
        }
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("no PNG files in '" + hr_dir + "'");

    SrDataset ds;
    ds.scale = scale;
    for (const auto& name : names) {
        Item item;
        item.name = name;
        ImageBuffer hr = mod_crop(load_png((fs::path(hr_dir) / name).string()), scale);
        item.hr = to_tensor(hr);

        const fs::path lr_file = fs::path(lr_path) / name;
        if (fs::exists(lr_file)) {
            ImageBuffer lr = load_png(lr_file.string());
            if (lr.width != hr.width / scale || lr.height != hr.height / scale) {
                throw DimensionError("LR image '" + lr_file.string() + "' is " +
                                     std::to_string(lr.width) + "x" + std::to_string(lr.height) +
                                     ", expected " + std::to_string(hr.width / scale) + "x" +
                                     std::to_string(hr.height / scale));
            }
            item.lr = to_tensor(lr);
        } else {
            Tensor lr = bicubic_resize(item.hr, hr.height / scale, hr.width / scale);
            // cache as 8-bit PNG and reload so cached and fresh runs see
            // identical quantized pixels
            ImageBuffer lr_img = from_tensor(lr);
            if (cache_lr) {
                std::error_code ec;
                fs::create_directories(lr_path, ec);
                if (!ec) save_png(lr_img, lr_file.string());
                if (log) *log << "generated LR cache " << lr_file.string() << "\n";
            }
            item.lr = to_tensor(lr_img);
        }
        ds.items.push_back(std::move(item));
    }
    return ds;
}

std::vector<std::size_t> usable_items(const SrDataset& ds, int lr_patch, std::ostream* warn) {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const Shape s = ds.items[i].lr.shape();
        if (s.h >= lr_patch && s.w >= lr_patch) {
            usable.push_back(i);
        } else if (warn) {
            *warn << "warning: skipping '" << ds.items[i].name << "' (" << s.w << "x" << s.h
                  << " LR smaller than patch " << lr_patch << ")\n";
        }
    }
    return usable;
}

SampleDraw draw_sample(const SrDataset& ds, const std::vector<std::size_t>& usable,
                       const TrainConfig& cfg, Rng& rng) {
    if (usable.empty()) throw Error("no usable images: dataset empty or all smaller than patch");
    SampleDraw d;
    d.item = usable[static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(usable.size())))];
    const Shape s = ds.items[d.item].lr.shape();
    d.y0 = rng.uniform_int(s.h - cfg.lr_patch + 1);
    d.x0 = rng.uniform_int(s.w - cfg.lr_patch + 1);
    d.aug = cfg.augment ? sample_augment(rng) : Augment{};
    return d;
}

std::pair<Tensor, Tensor> sample_batch(const SrDataset& ds, const TrainConfig& cfg, Rng& rng) {
    const std::vector<std::size_t> usable = usable_items(ds, cfg.lr_patch, nullptr);
    const int p = cfg.lr_patch;
    const int s = ds.scale;
    Tensor lr_batch = Tensor::zeros({cfg.batch, 3, p, p});
    Tensor hr_batch = Tensor::zeros({cfg.batch, 3, p * s, p * s});
    NoGradGuard no_grad;
    for (int b = 0; b < cfg.batch; ++b) {
        const SampleDraw d = draw_sample(ds, usable, cfg, rng);
        Tensor lr = ops::crop(ds.items[d.item].lr, d.y0, d.x0, p, p);
        Tensor hr = ops::crop(ds.items[d.item].hr, d.y0 * s, d.x0 * s, p * s, p * s);
        lr = apply_augment(lr, d.aug);
        hr = apply_augment(hr, d.aug);
        std::memcpy(lr_batch.data() + static_cast<std::int64_t>(b) * 3 * p * p, lr.data(),
                    sizeof(float) * static_cast<std::size_t>(3 * p * p));
        std::memcpy(hr_batch.data() + static_cast<std::int64_t>(b) * 3 * p * s * p * s, hr.data(),
                    sizeof(float) * static_cast<std::size_t>(3 * p * s * p * s));
    }
    return {lr_batch, hr_batch};
}

// ---------------------------------------------------------------------------
// Adan
// ---------------------------------------------------------------------------

void AdanOptimizer::ensure_slots(const ParamStore& params) {
    if (!slots_.empty()) {
        if (slots_.size() != params.size()) {
            throw ContractError("optimizer state holds " + std::to_string(slots_.size()) +
                                " slots but the store has " + std::to_string(params.size()) +
                                " parameters");
        }
        return;
    }
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t n = static_cast<std::size_t>(params.items()[i].second.numel());
        slots_[i].m.assign(n, 0.0);
        slots_[i].v.assign(n, 0.0);
        slots_[i].n.assign(n, 0.0);
        slots_[i].prev_g.assign(n, 0.0);
    }
}

bool AdanOptimizer::step(ParamStore& params, double lr) {
    ensure_slots(params);
    // reject the whole step on any non-finite gradient, leaving state intact
    for (auto& [name, t] : params.items()) {
        for (const float g : t.grad()) {
            if (!std::isfinite(g)) return false;
        }
    }
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, b3 = cfg_.beta3;
    const std::int64_t t_step = step_ + 1;
    const double bc1 = 1.0 - std::pow(1.0 - b1, static_cast<double>(t_step));
    const double bc2 = 1.0 - std::pow(1.0 - b2, static_cast<double>(t_step));
    const double bc3 = 1.0 - std::pow(1.0 - b3, static_cast<double>(t_step));
    const bool first = step_ == 0;

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params.items()[i].second;
        Slot& s = slots_[i];
        auto& grad = p.grad();
        auto& val = p.values();
        const std::size_t n = val.size();
        for (std::size_t k = 0; k < n; ++k) {
            const double g = static_cast<double>(grad[k]);
            const double diff = first ? 0.0 : g - s.prev_g[k];
            s.m[k] = (1.0 - b1) * s.m[k] + b1 * g;
            s.v[k] = (1.0 - b2) * s.v[k] + b2 * diff;
            const double u = g + (1.0 - b2) * diff;
            s.n[k] = (1.0 - b3) * s.n[k] + b3 * u * u;
            const double denom = std::sqrt(s.n[k] / bc3) + cfg_.eps;
            const double update = (s.m[k] / bc1 + (1.0 - b2) * s.v[k] / bc2) / denom;
            double w = static_cast<double>(val[k]);
            if (cfg_.weight_decay != 0.0) w /= 1.0 + lr * cfg_.weight_decay;
            val[k] = static_cast<float>(w - lr * update);
            s.prev_g[k] = g;
        }
    }
    ++step_;
    return true;
}

namespace {

constexpr char kStateMagic[4] = {'L', 'K', 'S', 'T'};
constexpr unsigned char kStateVersion = 0x01;

void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_f64le(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double get_f64le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

void AdanOptimizer::save_state(const std::string& path, std::int64_t next_iter) const {
    nlohmann::json header{
        {"step", step_},
        {"next_iter", next_iter},
        {"slots", nlohmann::json::array()},
    };
    for (const auto& s : slots_) {
        header["slots"].push_back(s.m.size());
    }
    const std::string hs = header.dump();

    std::vector<unsigned char> payload;
    for (const auto& s : slots_) {
        for (double v : s.m) put_f64le(payload, v);
        for (double v : s.v) put_f64le(payload, v);
        for (double v : s.n) put_f64le(payload, v);
        for (double v : s.prev_g) put_f64le(payload, v);
    }

    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), kStateMagic, kStateMagic + 4);
    bytes.push_back(kStateVersion);
    put_u32le(bytes, static_cast<std::uint32_t>(hs.size()));
    bytes.insert(bytes.end(), hs.begin(), hs.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    put_u32le(bytes, static_cast<std::uint32_t>(
                         ::crc32(0L, payload.data(), static_cast<uInt>(payload.size()))));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed to write '" + tmp + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("failed to move '" + tmp + "' to '" + path + "'");
}

std::int64_t AdanOptimizer::load_state(const std::string& path, const ParamStore& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kStateMagic, 4) != 0) {
        throw IntegrityError("optimizer state '" + path + "' has bad magic or is truncated");
    }
    if (bytes[4] != kStateVersion) {
        throw CompatibilityError("optimizer state '" + path + "' has unsupported version");
    }
    const std::uint32_t hlen = get_u32le(bytes.data() + 5);
    if (bytes.size() < 9 + hlen + 4) {
        throw IntegrityError("optimizer state '" + path + "' is truncated");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("optimizer state '" + path + "' has a corrupt header: " + e.what());
    }

    const unsigned char* payload = bytes.data() + 9 + hlen;
    const std::size_t payload_len = bytes.size() - 9 - hlen - 4;
    const std::uint32_t crc_stored = get_u32le(bytes.data() + bytes.size() - 4);
    if (crc_stored != static_cast<std::uint32_t>(
                          ::crc32(0L, payload, static_cast<uInt>(payload_len)))) {
        throw IntegrityError("optimizer state '" + path + "' failed its CRC check");
    }

    const auto sizes = header.at("slots").get<std::vector<std::size_t>>();
    if (sizes.size() != params.size()) {
        throw CompatibilityError("optimizer state '" + path + "' holds " +
                                 std::to_string(sizes.size()) + " slots, store has " +
                                 std::to_string(params.size()));
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] != static_cast<std::size_t>(params.items()[i].second.numel())) {
            throw CompatibilityError("optimizer state slot " + std::to_string(i) +
                                     " does not match parameter '" + params.items()[i].first +
                                     "'");
        }
        total += sizes[i];
    }
    if (payload_len != total * 4 * 8) {
        throw IntegrityError("optimizer state '" + path + "' payload size mismatch");
    }

    slots_.assign(sizes.size(), {});
    const unsigned char* p = payload;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        auto read_vec = [&](std::vector<double>& v) {
            v.resize(sizes[i]);
            for (std::size_t k = 0; k < sizes[i]; ++k, p += 8) v[k] = get_f64le(p);
        };
        read_vec(slots_[i].m);
        read_vec(slots_[i].v);
        read_vec(slots_[i].n);
        read_vec(slots_[i].prev_g);
    }
    step_ = header.at("step").get<std::int64_t>();
    return header.at("next_iter").get<std::int64_t>();
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

void write_checkpoint(const Model& model, const AdanOptimizer& opt, std::int64_t next_iter,
                      const std::string& out_dir, const std::string& stem, std::string& last) {
    const fs::path base = fs::path(out_dir) / stem;
    save_weights(model.store(), base.string() + ".lkmn");
    opt.save_state(base.string() + ".state", next_iter);
    last = base.string() + ".lkmn";
}

} // namespace

TrainResult train_loop(Model& model, const SrDataset& ds, const TrainConfig& cfg,
                       const std::string& out_dir, AdanOptimizer& opt, std::int64_t start_iter,
                       std::ostream* log) {
    cfg.validate();
    if (ds.scale != model.config().scale) {
        throw ConfigError("dataset scale " + std::to_string(ds.scale) +
                          " does not match model scale " + std::to_string(model.config().scale));
    }
    if (!out_dir.empty()) fs::create_directories(out_dir);
    usable_items(ds, cfg.lr_patch, &std::cerr); // warn once about skipped images

    TrainResult result;
    bool first_record = true;
    for (std::int64_t iter = start_iter; iter < cfg.iterations; ++iter) {
        Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(iter));
        auto [lr_batch, hr_batch] = sample_batch(ds, cfg, rng);

        model.params().zero_grads();
        Tensor pred = model.forward(lr_batch);
        Tensor l1 = l1_loss(pred, hr_batch);
        Tensor total = ops::mul_scalar(l1, static_cast<float>(cfg.l1_weight));
        double fft_value = 0.0;
        if (cfg.fft_weight != 0.0) {
            Tensor fft = fft_loss(pred, hr_batch);
            fft_value = static_cast<double>(fft.values()[0]);
            total = ops::add(total, ops::mul_scalar(fft, static_cast<float>(cfg.fft_weight)));
        }
        const double l1_value = static_cast<double>(l1.values()[0]);
        const double total_value = static_cast<double>(total.values()[0]);

        if (!std::isfinite(total_value)) {
            if (log) {
                *log << nlohmann::json{{"iter", iter}, {"error", "non-finite loss, aborting"}}
                     << "\n";
            }
            result.aborted_non_finite = true;
            break;
        }

        total.backward();
        const double lr = cosine_lr(iter, cfg.iterations, cfg.lr_init, cfg.lr_min);
        if (!opt.step(model.params(), lr)) {
            std::cerr << "warning: non-finite gradient at iteration " << iter
                      << ", step rejected\n";
        }

        if (first_record) {
            result.first_total = total_value;
            result.first_l1 = l1_value;
            first_record = false;
        }
        result.final_total = total_value;
        result.final_l1 = l1_value;
        result.completed_iters = iter + 1;

        if (log) {
            *log << nlohmann::json{{"iter", iter},
                                   {"l1", l1_value},
                                   {"fft", fft_value},
                                   {"total", total_value},
                                   {"lr", lr}}
                        .dump()
                 << "\n";
        }

        if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
            (iter + 1) % cfg.checkpoint_every == 0) {
            char stem[32];
            std::snprintf(stem, sizeof(stem), "ckpt_%06lld", static_cast<long long>(iter + 1));
            write_checkpoint(model, opt, iter + 1, out_dir, stem, result.last_checkpoint);
        }
    }

    if (!out_dir.empty() && !result.aborted_non_finite) {
        write_checkpoint(model, opt, result.completed_iters, out_dir, "final",
                         result.last_checkpoint);
    }
    return result;
}

} // namespace lkmn
