#include <cmath>
#include <cstdio>
#include <csetjmp>

#include <png.h>

#include "lkmn/image_io.hpp"

namespace lkmn {

namespace {

struct FileCloser {
    FILE* fp = nullptr;
    ~FileCloser() {
        if (fp) std::fclose(fp);
    }
};

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

} // namespace

ImageBuffer load_png(const std::string& path) {
    FileCloser file;
    file.fp = std::fopen(path.c_str(), "rb");
    if (!file.fp) throw IoError("cannot open '" + path + "' for reading");

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError("'" + path + "' is not a PNG file");
    }

    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw Error("png_create_read_struct failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw Error("png_create_info_struct failed");

    ImageBuffer img;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(r.png))) {
        throw IntegrityError("corrupt PNG data in '" + path + "'");
    }
    png_init_io(r.png, file.fp);
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    const png_byte depth = png_get_bit_depth(r.png, r.info);
    const png_byte color = png_get_color_type(r.png, r.info);
    if (depth == 16) {
        throw FormatError("'" + path + "' has unsupported bit depth 16 (only 8-bit is supported)");
    }
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(r.png);
    }
    png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);

    img.width = static_cast<std::int64_t>(png_get_image_width(r.png, r.info));
    img.height = static_cast<std::int64_t>(png_get_image_height(r.png, r.info));
    if (png_get_rowbytes(r.png, r.info) != static_cast<std::size_t>(img.width) * 3) {
        throw FormatError("'" + path + "' did not decode to 8-bit RGB");
    }
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height * 3));
    rows.resize(static_cast<std::size_t>(img.height));
    for (std::int64_t y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] = img.pixels.data() + y * img.width * 3;
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

void save_png(const ImageBuffer& img, const std::string& path) {
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<std::size_t>(img.width * img.height * 3)) {
        throw DimensionError("save_png: pixel buffer does not match " + std::to_string(img.width) +
                             "x" + std::to_string(img.height));
    }
    FileCloser file;
    file.fp = std::fopen(path.c_str(), "wb");
    if (!file.fp) throw IoError("cannot open '" + path + "' for writing");

    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) throw Error("png_create_write_struct failed");
    w.info = png_create_info_struct(w.png);
    if (!w.info) throw Error("png_create_info_struct failed");

    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (std::int64_t y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + y * img.width * 3);
    }

    if (setjmp(png_jmpbuf(w.png))) {
        throw IoError("failed to write PNG '" + path + "'");
    }
    png_init_io(w.png, file.fp);
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

Tensor to_tensor(const ImageBuffer& img) {
    const Shape s{1, 3, img.height, img.width};
    Tensor t = Tensor::zeros(s);
    const std::int64_t hw = img.height * img.width;
    for (std::int64_t y = 0; y < img.height; ++y) {
        for (std::int64_t x = 0; x < img.width; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                t.data()[ch * hw + y * img.width + x] =
                    static_cast<float>(img.at(y, x, ch)) / 255.0f;
            }
        }
    }
    return t;
}

ImageBuffer from_tensor(const Tensor& t) {
    const Shape s = t.shape();
    if (s.n != 1 || s.c != 3) {
        throw DimensionError("from_tensor: expected shape (1,3,h,w), got " + to_string(s));
    }
    ImageBuffer img;
    img.width = s.w;
    img.height = s.h;
    img.pixels.resize(static_cast<std::size_t>(s.h * s.w * 3));
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t y = 0; y < s.h; ++y) {
        for (std::int64_t x = 0; x < s.w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                float v = t.data()[ch * hw + y * s.w + x];
                v = std::min(1.0f, std::max(0.0f, v));
                img.at(y, x, ch) = static_cast<std::uint8_t>(std::floor(v * 255.0f + 0.5f));
            }
        }
    }
    return img;
}

ImageBuffer mod_crop(const ImageBuffer& img, int m) {
    if (m < 1) throw ConfigError("mod_crop: modulus must be >= 1, got " + std::to_string(m));
    const std::int64_t w = (img.width / m) * m;
    const std::int64_t h = (img.height / m) * m;
    if (w < 1 || h < 1) {
        throw DimensionError("mod_crop: " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " is smaller than modulus " +
                             std::to_string(m));
    }
    if (w == img.width && h == img.height) return img;
    ImageBuffer out;
    out.width = w;
    out.height = h;
    out.pixels.resize(static_cast<std::size_t>(w * h * 3));
    for (std::int64_t y = 0; y < h; ++y) {
        std::copy(img.pixels.begin() + y * img.width * 3,
                  img.pixels.begin() + y * img.width * 3 + w * 3,
                  out.pixels.begin() + y * w * 3);
    }
    return out;
}

} // namespace lkmn
