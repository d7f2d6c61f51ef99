#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lkmn/tensor.hpp"

namespace lkmn {

/// Interleaved 8-bit RGB image.
struct ImageBuffer {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels; // 3 * width * height, row-major RGB

    std::uint8_t& at(std::int64_t y, std::int64_t x, int ch) {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + ch)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x, int ch) const {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + ch)];
    }
};

/// Decode an 8-bit PNG. Grayscale is replicated to RGB, palette images are
/// expanded and alpha is dropped; 16-bit files are rejected with FormatError.
ImageBuffer load_png(const std::string& path);

/// Encode as 8-bit RGB PNG.
void save_png(const ImageBuffer& img, const std::string& path);

/// (1,3,h,w) float tensor in [0,1].
Tensor to_tensor(const ImageBuffer& img);

/// Back to 8-bit with clamping and round-half-up; exact round trip on 8-bit
/// data.
ImageBuffer from_tensor(const Tensor& t);

/// Crop bottom/right so both dimensions divide m.
ImageBuffer mod_crop(const ImageBuffer& img, int m);

} // namespace lkmn
