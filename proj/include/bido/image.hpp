#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bido::image {

class ImageGeometry {
   public:
    // Throws Error{BadGeometry} for a zero extent.
    ImageGeometry(std::size_t width, std::size_t height);

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t pixels() const noexcept { return width_ * height_; }
    std::size_t capacity() const noexcept { return 3 * pixels(); }

    bool operator==(const ImageGeometry&) const = default;

   private:
    std::size_t width_;
    std::size_t height_;
};

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

struct RgbImage {
    ImageGeometry geometry{1, 1};
    std::vector<std::uint8_t> channels;  // row-major, interleaved r,g,b
    bool truncated = false;

    Rgb pixel(std::size_t row, std::size_t col) const {
        const std::size_t at = 3 * (row * geometry.width() + col);
        return {channels[at], channels[at + 1], channels[at + 2]};
    }

    bool operator==(const RgbImage&) const = default;
};

enum class Format { LosslessPng, Jpeg };

// Consecutive byte triplets become (r,g,b) pixels in row-major order.
// Short input is zero padded; bytes past 3*width*height are dropped and
// the image is flagged truncated.
RgbImage pack_rgb(std::span<const std::uint8_t> bytes, ImageGeometry geom);

// Manifest bytes are packed as-is (text or binary XML).
RgbImage xml_to_image(std::span<const std::uint8_t> xml_bytes, ImageGeometry geom);

std::vector<std::uint8_t> encode_image(const RgbImage& img, Format format = Format::LosslessPng, int jpeg_quality = 95);

// PNG only (8-bit RGB or RGBA; alpha is dropped). Throws Error{MalformedContainer}.
RgbImage decode_image(std::span<const std::uint8_t> bytes);

}  // namespace bido::image
