#include <cmath>
#include <limits>

#include "lkmn/metrics.hpp"

namespace lkmn {

namespace {

Tensor crop_border(const Tensor& p, int border) {
    const Shape s = p.shape();
    if (border == 0) return p;
    if (s.h <= 2 * border || s.w <= 2 * border) {
        throw DimensionError("border crop " + std::to_string(border) + " leaves no pixels of " +
                             to_string(s));
    }
    Tensor out = Tensor::zeros({s.n, s.c, s.h - 2 * border, s.w - 2 * border});
    const Shape os = out.shape();
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        for (std::int64_t y = 0; y < os.h; ++y) {
            for (std::int64_t x = 0; x < os.w; ++x) {
                out.data()[(nc * os.h + y) * os.w + x] =
                    p.data()[(nc * s.h + y + border) * s.w + x + border];
            }
        }
    }
    return out;
}

void check_planes(const Tensor& a, const Tensor& b, const char* what) {
    if (!(a.shape() == b.shape())) {
        throw DimensionError(std::string(what) + ": plane shapes differ: " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
}

} // namespace

Tensor rgb_to_y(const ImageBuffer& img) {
    Tensor y = Tensor::zeros({1, 1, img.height, img.width});
    for (std::int64_t r = 0; r < img.height; ++r) {
        for (std::int64_t c = 0; c < img.width; ++c) {
            const double rr = img.at(r, c, 0);
            const double gg = img.at(r, c, 1);
            const double bb = img.at(r, c, 2);
            y.data()[r * img.width + c] =
                static_cast<float>(16.0 + (65.481 * rr + 128.553 * gg + 24.966 * bb) / 255.0);
        }
    }
    return y;
}

double psnr(const Tensor& a, const Tensor& b, int border_crop) {
    check_planes(a, b, "psnr");
    const Tensor ca = crop_border(a, border_crop);
    const Tensor cb = crop_border(b, border_crop);
    const std::int64_t n = ca.numel();
    double mse = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(ca.data()[i]) - static_cast<double>(cb.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b, int border_crop) {
    check_planes(a, b, "ssim");
    const Tensor ca = crop_border(a, border_crop);
    const Tensor cb = crop_border(b, border_crop);
    const Shape s = ca.shape();
    constexpr int kWin = 11;
    if (s.h < kWin || s.w < kWin) {
        throw DimensionError("ssim: planes must be at least 11x11 after cropping, got " +
                             to_string(s));
    }

    // 11x11 Gaussian window, sigma 1.5, normalized
    double win[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) {
            const double dy = i - (kWin - 1) / 2.0;
            const double dx = j - (kWin - 1) / 2.0;
            win[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            wsum += win[i][j];
        }
    }
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) win[i][j] /= wsum;
    }

    constexpr double kL = 255.0;
    const double c1 = (0.01 * kL) * (0.01 * kL);
    const double c2 = (0.03 * kL) * (0.03 * kL);

    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const float* pa = ca.data() + nc * s.h * s.w;
        const float* pb = cb.data() + nc * s.h * s.w;
        for (std::int64_t y = 0; y + kWin <= s.h; ++y) {
            for (std::int64_t x = 0; x + kWin <= s.w; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int i = 0; i < kWin; ++i) {
                    for (int j = 0; j < kWin; ++j) {
                        const double va = pa[(y + i) * s.w + x + j];
                        const double vb = pb[(y + i) * s.w + x + j];
                        const double w = win[i][j];
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

void EvalReport::finalize() {
    if (images.empty()) {
        mean_psnr_db = 0;
        mean_ssim = 0;
        return;
    }
    double psum = 0, ssum = 0;
    bool any_inf = false;
    for (const auto& e : images) {
        if (std::isinf(e.psnr_db)) {
            any_inf = true;
        } else {
            psum += e.psnr_db;
        }
        ssum += e.ssim;
    }
    mean_psnr_db = any_inf ? std::numeric_limits<double>::infinity()
                           : psum / static_cast<double>(images.size());
    mean_ssim = ssum / static_cast<double>(images.size());
}

nlohmann::json EvalReport::to_json() const {
    auto psnr_field = [](double v) -> nlohmann::json {
        if (std::isinf(v)) return "inf";
        return v;
    };
    nlohmann::json imgs = nlohmann::json::array();
    for (const auto& e : images) {
        imgs.push_back({{"name", e.name}, {"psnr_db", psnr_field(e.psnr_db)}, {"ssim", e.ssim}});
    }
    return nlohmann::json{
        {"protocol", {{"border_crop", border_crop}, {"y_channel", y_channel}}},
        {"images", imgs},
        {"mean_psnr_db", psnr_field(mean_psnr_db)},
        {"mean_ssim", mean_ssim},
    };
}

} // namespace lkmn
