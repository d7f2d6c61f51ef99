#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lkmn/image_io.hpp"

namespace lkmn {

/// Luma plane (1,1,h,w) via BT.601 studio swing:
/// Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255 with R,G,B in [0,255].
Tensor rgb_to_y(const ImageBuffer& img);

/// 10*log10(255^2 / MSE) over the planes after cropping border_crop pixels on
/// each side; +infinity when the planes are identical.
double psnr(const Tensor& a, const Tensor& b, int border_crop);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// L=255, averaged over valid window positions.
double ssim(const Tensor& a, const Tensor& b, int border_crop);

struct EvalEntry {
    std::string name;
    double psnr_db = 0;
    double ssim = 0;
};

/// Per-image metrics plus aggregate means and the protocol descriptor, so
/// reported numbers are self-describing.
struct EvalReport {
    int border_crop = 0;
    bool y_channel = true;
    std::vector<EvalEntry> images;
    double mean_psnr_db = 0;
    double mean_ssim = 0;

    void finalize();

    /// Infinite PSNR values serialize as the string "inf".
    nlohmann::json to_json() const;
};

} // namespace lkmn
