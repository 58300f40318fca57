#include <cstdio>
#include <cstring>
#include <vector>

#include <doctest.h>
#include <jpeglib.h>
#include <png.h>

#include "bido/error.hpp"
#include "bido/image.hpp"
#include "bido/rng.hpp"

using namespace bido;
using image::ImageGeometry;
using image::RgbImage;

namespace {

// Pixel-by-pixel reference packer.
RgbImage brute_pack(const std::vector<std::uint8_t>& bytes, ImageGeometry g) {
    RgbImage img{g, std::vector<std::uint8_t>(g.capacity(), 0), bytes.size() > g.capacity()};
    for (std::size_t row = 0; row < g.height(); ++row) {
        for (std::size_t col = 0; col < g.width(); ++col) {
            const std::size_t p = row * g.width() + col;
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t src = 3 * p + c;
                img.channels[3 * p + c] = src < bytes.size() ? bytes[src] : 0;
            }
        }
    }
    return img;
}

std::vector<std::uint8_t> libpng_decode(const std::vector<std::uint8_t>& png, png_uint_32& w, png_uint_32& h) {
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    REQUIRE(png_image_begin_read_from_memory(&im, png.data(), png.size()) != 0);
    im.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> out(PNG_IMAGE_SIZE(im));
    REQUIRE(png_image_finish_read(&im, nullptr, out.data(), 0, nullptr) != 0);
    w = im.width;
    h = im.height;
    return out;
}

std::vector<std::uint8_t> libpng_encode_rgba(const std::vector<std::uint8_t>& rgba, png_uint_32 w, png_uint_32 h) {
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    im.width = w;
    im.height = h;
    im.format = PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    REQUIRE(png_image_write_to_memory(&im, nullptr, &size, 0, rgba.data(), 0, nullptr) != 0);
    std::vector<std::uint8_t> out(size);
    REQUIRE(png_image_write_to_memory(&im, out.data(), &size, 0, rgba.data(), 0, nullptr) != 0);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> libjpeg_decode(const std::vector<std::uint8_t>& jpg, unsigned& w, unsigned& h) {
    jpeg_decompress_struct cinfo;
    jpeg_error_mgr err;
    cinfo.err = jpeg_std_error(&err);
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, jpg.data(), jpg.size());
    REQUIRE(jpeg_read_header(&cinfo, TRUE) == JPEG_HEADER_OK);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    w = cinfo.output_width;
    h = cinfo.output_height;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t n) {
    std::vector<std::uint8_t> b(n);
    for (auto& v : b) v = rng.byte();
    return b;
}

}  // namespace

TEST_SUITE("image") {
    TEST_CASE("worked example packs to the documented triplet") {
        const std::vector<std::uint8_t> bytes{0x86, 0x88, 0x12};
        const RgbImage img = image::pack_rgb(bytes, ImageGeometry(1, 1));
        CHECK(img.pixel(0, 0) == image::Rgb{134, 136, 18});
        CHECK_FALSE(img.truncated);
    }

    TEST_CASE("geometry rejects zero extents") {
        CHECK_THROWS_AS(ImageGeometry(0, 4), Error);
        CHECK_THROWS_AS(ImageGeometry(4, 0), Error);
        try {
            ImageGeometry(0, 0);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::BadGeometry);
        }
    }

    TEST_CASE("empty input gives an all-zero image") {
        const RgbImage img = image::pack_rgb({}, ImageGeometry(3, 2));
        CHECK(img.channels == std::vector<std::uint8_t>(18, 0));
        CHECK_FALSE(img.truncated);
    }

    TEST_CASE("partial triplet is zero padded") {
        const std::vector<std::uint8_t> bytes{1, 2, 3, 4};
        const RgbImage img = image::pack_rgb(bytes, ImageGeometry(2, 1));
        CHECK(img.pixel(0, 0) == image::Rgb{1, 2, 3});
        CHECK(img.pixel(0, 1) == image::Rgb{4, 0, 0});
    }

    TEST_CASE("overflow is dropped and flagged") {
        std::vector<std::uint8_t> bytes(13, 7);
        const RgbImage img = image::pack_rgb(bytes, ImageGeometry(2, 2));
        CHECK(img.truncated);
        CHECK(img.channels.size() == 12);
        const RgbImage exact = image::pack_rgb(std::vector<std::uint8_t>(12, 7), ImageGeometry(2, 2));
        CHECK_FALSE(exact.truncated);
    }

    TEST_CASE("pixels follow row-major order") {
        std::vector<std::uint8_t> bytes(18);
        for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(i);
        const RgbImage img = image::pack_rgb(bytes, ImageGeometry(3, 2));
        CHECK(img.pixel(1, 0) == image::Rgb{9, 10, 11});
        CHECK(img.pixel(0, 2) == image::Rgb{6, 7, 8});
    }

    TEST_CASE("pack_rgb matches the brute-force packer on random inputs") {
        Rng rng(11);
        for (int trial = 0; trial < 500; ++trial) {
            const ImageGeometry g(1 + rng.below(9), 1 + rng.below(9));
            const auto bytes = random_bytes(rng, rng.below(g.capacity() * 2 + 2));
            REQUIRE(image::pack_rgb(bytes, g) == brute_pack(bytes, g));
        }
    }

    TEST_CASE("xml images pack the raw manifest bytes") {
        const std::string text = "<manifest/>";
        const std::vector<std::uint8_t> bytes(text.begin(), text.end());
        CHECK(image::xml_to_image(bytes, ImageGeometry(4, 4)) == image::pack_rgb(bytes, ImageGeometry(4, 4)));
    }

    TEST_CASE("png encoding decodes identically with libpng") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            const ImageGeometry g(1 + rng.below(40), 1 + rng.below(40));
            const RgbImage img = image::pack_rgb(random_bytes(rng, g.capacity()), g);
            const auto png = image::encode_image(img);
            png_uint_32 w = 0, h = 0;
            const auto ref = libpng_decode(png, w, h);
            CHECK(w == g.width());
            CHECK(h == g.height());
            CHECK(ref == img.channels);
            CHECK(image::decode_image(png) == RgbImage{img.geometry, img.channels, false});
        }
    }

    TEST_CASE("decoder drops alpha from libpng RGBA files") {
        Rng rng(9);
        const png_uint_32 w = 7, h = 5;
        const auto rgba = random_bytes(rng, w * h * 4);
        const RgbImage img = image::decode_image(libpng_encode_rgba(rgba, w, h));
        REQUIRE(img.geometry == ImageGeometry(w, h));
        for (std::size_t p = 0; p < w * h; ++p) {
            for (std::size_t c = 0; c < 3; ++c) CHECK(img.channels[3 * p + c] == rgba[4 * p + c]);
        }
    }

    TEST_CASE("decoder rejects garbage and truncated streams") {
        const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
        CHECK_THROWS_AS(image::decode_image(junk), Error);
        const RgbImage img = image::pack_rgb(std::vector<std::uint8_t>(300, 9), ImageGeometry(10, 10));
        auto png = image::encode_image(img);
        png.resize(png.size() / 2);
        try {
            image::decode_image(png);
            FAIL("expected failure");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MalformedContainer);
        }
    }

    TEST_CASE("jpeg output decodes with libjpeg close to the source") {
        std::vector<std::uint8_t> bytes(64 * 64 * 3);
        for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>((i / 3) % 64 * 4);
        const RgbImage img = image::pack_rgb(bytes, ImageGeometry(64, 64));
        const auto jpg = image::encode_image(img, image::Format::Jpeg, 95);
        REQUIRE(jpg.size() > 4);
        CHECK(jpg[0] == 0xFF);
        CHECK(jpg[1] == 0xD8);
        unsigned w = 0, h = 0;
        const auto ref = libjpeg_decode(jpg, w, h);
        CHECK(w == 64);
        CHECK(h == 64);
        double err = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) err += std::abs(int(ref[i]) - int(img.channels[i]));
        CHECK(err / static_cast<double>(ref.size()) < 4.0);
    }
}
