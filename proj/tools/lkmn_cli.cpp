// Command-line front end: model/complexity info, training, single-image and
// batch super-resolution, evaluation, and bicubic degradation.
//
// Exit codes: 0 success, 2 usage or input error, 3 data integrity error.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "lkmn/metrics.hpp"
#include "lkmn/model.hpp"
#include "lkmn/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace lkmn;

namespace {

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max(1, std::min<int>(threads, static_cast<int>(count)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
#ifdef _OPENMP
            omp_set_num_threads(1); // image-level parallelism owns the cores
#endif
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Model options shared by info/train. Explicit flags override the config
// file, which overrides the preset, which overrides the defaults.
struct ModelOpts {
    std::string preset;
    std::string config_file;
    int scale = -1;
    int channels = -1;
    int num_rfmg = -1;
    int shuffle_group = -1;
    int kernel_size = -1;
    int distill_channels = -1;
    bool no_shuffle = false;
    bool no_attention = false;
    bool no_gamma = false;
    bool no_cross_gate = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "Architecture preset (lkmn-x2|x3|x4, lkmn-l-x2|x3|x4)");
        cmd->add_option("--config", config_file, "JSON config file (ModelConfig field names)");
        cmd->add_option("--scale", scale, "Upscale factor (2|3|4)");
        cmd->add_option("--channels", channels, "Feature channels");
        cmd->add_option("--num-rfmg", num_rfmg, "Number of residual feature modulation groups");
        cmd->add_option("--shuffle-group", shuffle_group, "Channel shuffle/split group count");
        cmd->add_option("--kernel-size", kernel_size, "Strip kernel length (odd)");
        cmd->add_option("--distill-channels", distill_channels, "Distillation tap width");
        cmd->add_flag("--no-shuffle", no_shuffle, "Disable channel shuffle");
        cmd->add_flag("--no-attention", no_attention, "Disable channel attention");
        cmd->add_flag("--no-gamma", no_gamma, "Disable the learnable scaler");
        cmd->add_flag("--no-cross-gate", no_cross_gate, "Use direct instead of cross gating");
    }

    ModelConfig resolve() const {
        ModelConfig cfg = preset.empty() ? ModelConfig::lkmn(4) : ModelConfig::preset(preset);
        const bool explicit_width = channels >= 0;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw IoError("cannot open config file '" + config_file + "'");
            nlohmann::json j;
            in >> j;
            nlohmann::json base = cfg.to_json();
            for (auto& [key, value] : j.items()) base[key] = value;
            cfg = ModelConfig::from_json(base);
        }
        if (scale >= 0) cfg.scale = scale;
        if (channels >= 0) cfg.channels = channels;
        if (num_rfmg >= 0) cfg.num_rfmg = num_rfmg;
        if (shuffle_group >= 0) cfg.shuffle_group = shuffle_group;
        if (kernel_size >= 0) cfg.kernel_size = kernel_size;
        if (distill_channels >= 0) cfg.distill_channels = distill_channels;
        if (explicit_width && distill_channels < 0) {
            cfg.distill_channels = std::max(1, cfg.channels / 2);
        }
        if ((explicit_width || shuffle_group >= 0)) {
            cfg.ca_hidden = BlockConfig::default_ca_hidden(cfg.channels, cfg.shuffle_group);
        }
        if (no_shuffle) cfg.use_channel_shuffle = false;
        if (no_attention) cfg.use_channel_attention = false;
        if (no_gamma) cfg.use_gamma = false;
        if (no_cross_gate) cfg.cross_gate = false;
        cfg.validate();
        return cfg;
    }
};

std::pair<std::int64_t, std::int64_t> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("size must be WxH, got '" + s + "'");
    return {std::stoll(s.substr(0, x)), std::stoll(s.substr(x + 1))};
}

std::string human_count(std::int64_t v) {
    char buf[64];
    if (v >= 1000000000) {
        std::snprintf(buf, sizeof(buf), "%.2fG", static_cast<double>(v) / 1e9);
    } else if (v >= 1000000) {
        std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(v) / 1e6);
    } else if (v >= 1000) {
        std::snprintf(buf, sizeof(buf), "%.1fK", static_cast<double>(v) / 1e3);
    } else {
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    }
    return buf;
}

int cmd_info(const ModelOpts& opts, const std::string& out_size, int bench, std::uint64_t seed,
             bool json_out) {
    const ModelConfig cfg = opts.resolve();
    auto [out_w, out_h] = parse_size(out_size);
    const Complexity cx = complexity(cfg, out_h, out_w);

    nlohmann::json j{
        {"config", cfg.to_json()},
        {"params",
         {{"total", cx.params_total},
          {"shallow", cx.params_shallow},
          {"body", cx.params_body},
          {"per_rfmg", cx.params_per_rfmg},
          {"head", cx.params_head}}},
        {"flops",
         {{"out_size", out_size},
          {"lr_size", std::to_string(cx.lr_w) + "x" + std::to_string(cx.lr_h)},
          {"total", cx.flops_total},
          {"shallow", cx.flops_shallow},
          {"body", cx.flops_body},
          {"per_rfmg", cx.flops_per_rfmg},
          {"head", cx.flops_head}}},
    };

    if (bench != 0) {
        if (bench < 0) throw ConfigError("--bench must be a positive run count");
        Model model = Model::build(cfg, seed);
        Rng rng(seed);
        Tensor input = Tensor::zeros({1, 3, cx.lr_h, cx.lr_w});
        for (auto& v : input.values()) v = static_cast<float>(rng.uniform());
        NoGradGuard no_grad;
        std::vector<double> times;
        for (int i = 0; i < bench; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            Tensor out = model.forward(input);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        double mean = 0;
        for (double t : times) mean += t;
        mean /= static_cast<double>(times.size());
        double var = 0;
        for (double t : times) var += (t - mean) * (t - mean);
        const double sigma = times.size() > 1 ? std::sqrt(var / (times.size() - 1.0)) : 0.0;
        j["bench"] = {{"runs", bench}, {"mean_ms", mean}, {"sigma_ms", sigma}};
    }

    if (json_out) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "params: " << cx.params_total << " (" << human_count(cx.params_total) << ")\n"
                  << "  shallow " << cx.params_shallow << " | body " << cx.params_body << " ("
                  << cfg.num_rfmg << " x " << cx.params_per_rfmg << ") | head " << cx.params_head
                  << "\n"
                  << "flops @" << out_size << " (LR " << cx.lr_w << "x" << cx.lr_h
                  << "): " << cx.flops_total << " (" << human_count(cx.flops_total) << ")\n"
                  << "  shallow " << cx.flops_shallow << " | body " << cx.flops_body << " ("
                  << cfg.num_rfmg << " x " << cx.flops_per_rfmg << ") | head " << cx.flops_head
                  << "\n";
        if (j.contains("bench")) {
            std::cout << "bench: " << j["bench"]["mean_ms"].get<double>() << " ms mean, "
                      << j["bench"]["sigma_ms"].get<double>() << " ms sigma over " << bench
                      << " runs\n";
        }
    }
    return 0;
}

int cmd_train(const ModelOpts& opts, const std::string& dataset_dir, const std::string& out_dir,
              TrainConfig tcfg, const std::string& resume, std::uint64_t model_seed) {
    if (!fs::is_directory(dataset_dir)) {
        std::cerr << "error: dataset directory '" << dataset_dir << "' not found\n";
        return 2;
    }
    Model model;
    AdanOptimizer opt;
    std::int64_t start_iter = 0;
    if (!resume.empty()) {
        model = Model(load_weights(resume));
        const std::string state = fs::path(resume).replace_extension(".state").string();
        start_iter = opt.load_state(state, model.params());
        std::cerr << "resuming from " << resume << " at iteration " << start_iter << "\n";
    } else {
        model = Model::build(opts.resolve(), model_seed);
    }
    tcfg.scale = model.config().scale;
    tcfg.validate();

    SrDataset ds = SrDataset::load(dataset_dir, tcfg.scale, "", true, &std::cerr);
    fs::create_directories(out_dir);
    std::ofstream log((fs::path(out_dir) / "train.log").string(),
                      start_iter > 0 ? std::ios::app : std::ios::trunc);

    const TrainResult result = train_loop(model, ds, tcfg, out_dir, opt, start_iter, &log);
    if (result.aborted_non_finite) {
        std::cerr << "aborted on non-finite loss; last checkpoint: "
                  << (result.last_checkpoint.empty() ? "(none)" : result.last_checkpoint) << "\n";
        return 1;
    }
    std::cerr << "trained " << result.completed_iters << " iterations, total loss "
              << result.first_total << " -> " << result.final_total << "\n"
              << "final weights: " << result.last_checkpoint << "\n";
    return 0;
}

int cmd_sr(const std::string& weights, const std::vector<std::string>& inputs,
           const std::string& out_dir, bool ensemble, int tile, int overlap, int threads) {
    Model model(load_weights(weights));
    fs::create_directories(out_dir);
    const int scale = model.config().scale;
    parallel_for(inputs.size(), threads, [&](std::size_t i) {
        NoGradGuard no_grad;
        const ImageBuffer img = load_png(inputs[i]);
        const Tensor lr = to_tensor(img);
        Tensor srt;
        auto fwd = [&model](const Tensor& t) { return model.forward(t); };
        if (tile > 0) {
            srt = tile_forward<float>(fwd, lr, tile, overlap, scale);
        } else if (ensemble) {
            srt = self_ensemble_forward<float>(fwd, lr);
        } else {
            srt = model.forward(lr);
        }
        const ImageBuffer out = from_tensor(ops::clamp01(srt));
        const std::string out_path = (fs::path(out_dir) / fs::path(inputs[i]).filename()).string();
        save_png(out, out_path);
        std::cerr << inputs[i] << " -> " << out_path << " (" << img.width << "x" << img.height
                  << " -> " << out.width << "x" << out.height << ")\n";
    });
    return 0;
}

int cmd_eval(const std::string& weights, const std::string& baseline, const std::string& hr_dir,
             const std::string& lr_dir, bool ensemble, int border, const std::string& out_file,
             int threads) {
    if (!fs::is_directory(hr_dir)) {
        std::cerr << "error: HR directory '" << hr_dir << "' not found\n";
        return 2;
    }
    Model model;
    int scale = 0;
    if (!baseline.empty()) {
        if (baseline != "bicubic") throw ConfigError("unknown baseline '" + baseline + "'");
        scale = 4;
    }
    if (!weights.empty()) {
        model = Model(load_weights(weights));
        scale = model.config().scale;
    } else if (baseline.empty()) {
        throw ConfigError("eval needs --weights or --baseline bicubic");
    }

    const SrDataset ds = SrDataset::load(hr_dir, scale, lr_dir, false, &std::cerr);
    EvalReport report;
    report.border_crop = border >= 0 ? border : scale;
    report.y_channel = true;
    report.images.resize(ds.items.size());

    parallel_for(ds.items.size(), threads, [&](std::size_t i) {
        NoGradGuard no_grad;
        const auto& item = ds.items[i];
        const Shape hs = item.hr.shape();
        Tensor srt;
        if (!weights.empty()) {
            auto fwd = [&](const Tensor& t) { return model.forward(t); };
            srt = ensemble ? self_ensemble_forward<float>(fwd, item.lr) : model.forward(item.lr);
        } else {
            srt = bicubic_resize(item.lr, hs.h, hs.w);
        }
        const ImageBuffer sr_img = from_tensor(ops::clamp01(srt));
        const ImageBuffer hr_img = from_tensor(item.hr);
        const Tensor y_sr = rgb_to_y(sr_img);
        const Tensor y_hr = rgb_to_y(hr_img);
        report.images[i] = EvalEntry{item.name, psnr(y_sr, y_hr, report.border_crop),
                                     ssim(y_sr, y_hr, report.border_crop)};
    });
    report.finalize();

    const std::string text = report.to_json().dump(2);
    if (out_file.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream out(out_file);
        if (!out) throw IoError("cannot open '" + out_file + "' for writing");
        out << text << "\n";
        std::cerr << "report written to " << out_file << "\n";
    }
    return 0;
}

int cmd_degrade(const std::string& hr_dir, int scale, const std::string& out_dir, int threads) {
    if (!fs::is_directory(hr_dir)) {
        std::cerr << "error: HR directory '" << hr_dir << "' not found\n";
        return 2;
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(hr_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            names.push_back(entry.path().filename().string());
        }
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) {
        std::cerr << "error: no PNG files in '" << hr_dir << "'\n";
        return 2;
    }
    fs::create_directories(out_dir);
    std::atomic<int> failures{0};
    std::mutex log_mutex;
    parallel_for(names.size(), threads, [&](std::size_t i) {
        try {
            const ImageBuffer hr = mod_crop(load_png((fs::path(hr_dir) / names[i]).string()), scale);
            const Tensor t = to_tensor(hr);
            const Tensor lr = bicubic_resize(t, hr.height / scale, hr.width / scale);
            save_png(from_tensor(lr), (fs::path(out_dir) / names[i]).string());
        } catch (const Error& e) {
            ++failures;
            std::lock_guard<std::mutex> lock(log_mutex);
            std::cerr << "failed: " << names[i] << ": " << e.what() << "\n";
        }
    });
    std::cerr << "degraded " << (names.size() - static_cast<std::size_t>(failures.load())) << "/"
              << names.size() << " images into " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LKMN super-resolution engine"};
    app.require_subcommand(1);

    int threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    std::uint64_t seed = 0;
    bool json_out = false;
    app.add_option("--threads", threads, "Worker threads for per-image commands");
    app.add_option("--seed", seed, "Seed for all randomness");
    app.add_flag("--json", json_out, "Machine-readable stdout where applicable");

    // info
    auto* info = app.add_subcommand("info", "Parameter/FLOP accounting and optional benchmark");
    ModelOpts info_opts;
    info_opts.attach(info);
    std::string out_size = "1280x720";
    int bench = 0;
    info->add_option("--out-size", out_size, "HR output size WxH for FLOP accounting");
    info->add_option("--bench", bench, "Run N timed forwards and report mean/sigma");

    // train
    auto* train = app.add_subcommand("train", "Train a model on a directory of HR PNGs");
    ModelOpts train_opts;
    train_opts.attach(train);
    std::string dataset_dir, train_out, resume;
    TrainConfig tcfg;
    train->add_option("--dataset", dataset_dir, "Directory of HR PNGs")->required();
    train->add_option("--out", train_out, "Output directory for checkpoints/log")->required();
    train->add_option("--iters", tcfg.iterations, "Total iterations");
    train->add_option("--batch", tcfg.batch, "Batch size");
    train->add_option("--patch", tcfg.lr_patch, "LR patch size");
    train->add_option("--lr-init", tcfg.lr_init, "Initial learning rate");
    train->add_option("--lr-min", tcfg.lr_min, "Minimum learning rate");
    train->add_option("--fft-weight", tcfg.fft_weight, "Frequency-domain loss weight");
    train->add_option("--l1-weight", tcfg.l1_weight, "Pixel L1 loss weight");
    train->add_option("--checkpoint-every", tcfg.checkpoint_every, "Checkpoint interval");
    bool no_augment = false;
    train->add_flag("--no-augment", no_augment, "Disable rotation/flip augmentation");
    train->add_option("--resume", resume, "Checkpoint .lkmn to resume from");

    // sr
    auto* sr = app.add_subcommand("sr", "Upscale images with a trained model");
    std::string sr_weights, sr_out = ".";
    std::vector<std::string> sr_inputs;
    bool sr_ensemble = false;
    int sr_tile = 0, sr_overlap = 32;
    sr->add_option("--weights", sr_weights, "Weight file")->required();
    sr->add_option("inputs", sr_inputs, "Input PNGs")->required();
    sr->add_option("-o,--out", sr_out, "Output directory");
    sr->add_flag("--ensemble", sr_ensemble, "Average the 8 dihedral-transformed predictions");
    sr->add_option("--tile", sr_tile, "Tiled inference with this tile size");
    sr->add_option("--overlap", sr_overlap, "Per-side tile context");

    // eval
    auto* ev = app.add_subcommand("eval", "Y-channel PSNR/SSIM over a directory");
    std::string ev_weights, ev_baseline, ev_hr, ev_lr, ev_out;
    bool ev_ensemble = false;
    int ev_border = -1;
    bool ev_no_border = false;
    ev->add_option("--weights", ev_weights, "Weight file");
    ev->add_option("--baseline", ev_baseline, "Evaluate a baseline instead (bicubic)");
    ev->add_option("--hr", ev_hr, "Directory of ground-truth HR PNGs")->required();
    ev->add_option("--lr", ev_lr, "Directory of LR PNGs (generated if absent)");
    ev->add_flag("--ensemble", ev_ensemble, "Self-ensemble inference");
    ev->add_option("--border", ev_border, "Border crop in pixels (default: scale)");
    ev->add_flag("--no-border-crop", ev_no_border, "Disable border cropping");
    ev->add_option("--out", ev_out, "Write the JSON report here instead of stdout");

    // degrade
    auto* deg = app.add_subcommand("degrade", "Mod-crop and bicubic-downscale a directory");
    std::string deg_hr, deg_out;
    int deg_scale = 4;
    deg->add_option("--hr", deg_hr, "Directory of HR PNGs")->required();
    deg->add_option("--scale", deg_scale, "Downscale factor")->required();
    deg->add_option("--out", deg_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (info->parsed()) return cmd_info(info_opts, out_size, bench, seed, json_out);
        if (train->parsed()) {
            tcfg.seed = seed;
            tcfg.augment = !no_augment;
            return cmd_train(train_opts, dataset_dir, train_out, tcfg, resume, seed);
        }
        if (sr->parsed()) {
            return cmd_sr(sr_weights, sr_inputs, sr_out, sr_ensemble, sr_tile, sr_overlap,
                          threads);
        }
        if (ev->parsed()) {
            if (ev_no_border) ev_border = 0;
            return cmd_eval(ev_weights, ev_baseline, ev_hr, ev_lr, ev_ensemble, ev_border, ev_out,
                            threads);
        }
        if (deg->parsed()) return cmd_degrade(deg_hr, deg_scale, deg_out, threads);
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return 3;
    } catch (const CompatibilityError& e) {
        std::cerr << "compatibility error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
