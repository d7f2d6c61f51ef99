#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include <png.h>

#include "lkmn/image_io.hpp"
#include "testers.hpp"

using namespace lkmn;
namespace fs = std::filesystem;

namespace {

const std::string kTmp = "image_test_tmp";

// write a PNG with arbitrary color type / bit depth for decoder tests
void write_raw_png(const std::string& path, std::int64_t w, std::int64_t h, int color_type,
                   int bit_depth, const std::vector<std::uint8_t>& rowdata) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = rowdata.size() / static_cast<std::size_t>(h);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (std::int64_t y = 0; y < h; ++y) {
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(rowdata.data() + static_cast<std::size_t>(y) * stride);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

ImageBuffer random_image(std::int64_t w, std::int64_t h, std::uint64_t seed) {
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w * h * 3));
    Rng rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    return img;
}

} // namespace

TEST_CASE("png round trip is bit-exact") {
    fs::create_directories(kTmp);
    const ImageBuffer img = random_image(33, 21, 1);
    save_png(img, kTmp + "/rt.png");
    const ImageBuffer back = load_png(kTmp + "/rt.png");
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("one-pixel image") {
    fs::create_directories(kTmp);
    ImageBuffer img;
    img.width = 1;
    img.height = 1;
    img.pixels = {17, 200, 3};
    save_png(img, kTmp + "/one.png");
    const ImageBuffer back = load_png(kTmp + "/one.png");
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("16-bit input is rejected with a clear error") {
    fs::create_directories(kTmp);
    std::vector<std::uint8_t> rows(static_cast<std::size_t>(2 * 2 * 3 * 2), 0x40);
    write_raw_png(kTmp + "/deep.png", 2, 2, PNG_COLOR_TYPE_RGB, 16, rows);
    CHECK_THROWS_WITH_AS(load_png(kTmp + "/deep.png"), doctest::Contains("bit depth 16"),
                         FormatError);
}

TEST_CASE("rgba alpha is dropped, grayscale is replicated") {
    fs::create_directories(kTmp);
    // 2x1 RGBA: red with alpha 10, green with alpha 200
    std::vector<std::uint8_t> rgba{255, 0, 0, 10, 0, 255, 0, 200};
    write_raw_png(kTmp + "/rgba.png", 2, 1, PNG_COLOR_TYPE_RGB_ALPHA, 8, rgba);
    const ImageBuffer a = load_png(kTmp + "/rgba.png");
    CHECK(a.at(0, 0, 0) == 255);
    CHECK(a.at(0, 0, 1) == 0);
    CHECK(a.at(0, 1, 1) == 255);

    std::vector<std::uint8_t> gray{7, 130, 255};
    write_raw_png(kTmp + "/gray.png", 3, 1, PNG_COLOR_TYPE_GRAY, 8, gray);
    const ImageBuffer g = load_png(kTmp + "/gray.png");
    for (int x = 0; x < 3; ++x) {
        CHECK(g.at(0, x, 0) == gray[static_cast<std::size_t>(x)]);
        CHECK(g.at(0, x, 1) == gray[static_cast<std::size_t>(x)]);
        CHECK(g.at(0, x, 2) == gray[static_cast<std::size_t>(x)]);
    }
}

TEST_CASE("missing files and non-png data") {
    fs::create_directories(kTmp);
    CHECK_THROWS_AS(load_png(kTmp + "/nope.png"), IoError);
    {
        std::FILE* fp = std::fopen((kTmp + "/junk.png").c_str(), "wb");
        REQUIRE(fp);
        std::fputs("definitely not a png", fp);
        std::fclose(fp);
    }
    CHECK_THROWS_AS(load_png(kTmp + "/junk.png"), FormatError);
}

TEST_CASE("tensor conversion endpoints and exhaustive round trip") {
    ImageBuffer img;
    img.width = 256;
    img.height = 1;
    img.pixels.resize(256 * 3);
    for (int i = 0; i < 256; ++i) {
        img.pixels[static_cast<std::size_t>(3 * i)] = static_cast<std::uint8_t>(i);
        img.pixels[static_cast<std::size_t>(3 * i + 1)] = static_cast<std::uint8_t>(255 - i);
        img.pixels[static_cast<std::size_t>(3 * i + 2)] = static_cast<std::uint8_t>((i * 7) % 256);
    }
    const Tensor t = to_tensor(img);
    CHECK(t.shape() == Shape{1, 3, 1, 256});
    CHECK(t.at(0, 0, 0, 0) == 0.0f);
    CHECK(t.at(0, 0, 0, 255) == 1.0f);
    const ImageBuffer back = from_tensor(t);
    CHECK(back.pixels == img.pixels); // exact over all 256 levels

    Tensor over = Tensor::zeros({1, 3, 1, 2});
    over.at(0, 0, 0, 0) = 1.2f;
    over.at(0, 1, 0, 0) = -0.3f;
    over.at(0, 2, 0, 1) = 0.5f;
    const ImageBuffer clamped = from_tensor(over);
    CHECK(clamped.at(0, 0, 0) == 255);
    CHECK(clamped.at(0, 0, 1) == 0);
    CHECK(clamped.at(0, 1, 2) == 128); // 0.5*255 = 127.5 rounds half up

    CHECK_THROWS_AS(from_tensor(Tensor::zeros({1, 4, 2, 2})), DimensionError);
}

TEST_CASE("mod_crop") {
    const ImageBuffer img = random_image(101, 101, 2);
    const ImageBuffer c4 = mod_crop(img, 4);
    CHECK(c4.width == 100);
    CHECK(c4.height == 100);
    // cropped content preserved
    for (int y = 0; y < 100; ++y) {
        for (int x = 0; x < 100; ++x) {
            CHECK(c4.at(y, x, 0) == img.at(y, x, 0));
        }
    }

    const ImageBuffer same = mod_crop(c4, 4);
    CHECK(same.pixels == c4.pixels); // idempotent

    const ImageBuffer tiny = random_image(7, 5, 3);
    CHECK_THROWS_AS(mod_crop(tiny, 8), DimensionError);
    CHECK_THROWS_AS(mod_crop(tiny, 0), ConfigError);
}
