#include "bido/image.hpp"

#include <cstdio>
#include <jpeglib.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <string>

#include "bido/error.hpp"

namespace bido::image {
namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
// Guards against absurd IHDR extents in untrusted files.
constexpr std::size_t kMaxPixels = std::size_t{1} << 28;

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> payload) {
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + payload.size()));
    put_u32be(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    const std::size_t w = img.geometry.width();
    const std::size_t h = img.geometry.height();
    if (w > std::numeric_limits<std::uint32_t>::max() || h > std::numeric_limits<std::uint32_t>::max() ||
        img.geometry.pixels() > kMaxPixels) {
        throw Error(ErrorCode::EncodeFailure, "image too large for PNG");
    }
    if (img.channels.size() != img.geometry.capacity()) {
        throw Error(ErrorCode::EncodeFailure, "channel buffer does not match geometry");
    }

    // Filter type 0 on every scanline.
    const std::size_t stride = 3 * w;
    std::vector<std::uint8_t> raw;
    raw.reserve(h * (stride + 1));
    for (std::size_t y = 0; y < h; ++y) {
        raw.push_back(0);
        auto row = img.channels.begin() + static_cast<std::ptrdiff_t>(y * stride);
        raw.insert(raw.end(), row, row + static_cast<std::ptrdiff_t>(stride));
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) !=
        Z_OK) {
        throw Error(ErrorCode::EncodeFailure, "deflate failed");
    }
    packed.resize(packed_size);

    std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(w));
    put_u32be(ihdr, static_cast<std::uint32_t>(h));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, truecolor, deflate, no filter method, no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
    auto fail = [](const std::string& why) { return Error(ErrorCode::MalformedContainer, why); };
    if (bytes.size() < kPngSignature.size() || !std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
        throw fail("not a PNG stream");
    }

    std::size_t pos = kPngSignature.size();
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    unsigned channels = 0;
    bool have_header = false;
    bool have_end = false;
    std::vector<std::uint8_t> idat;
    while (pos + 12 <= bytes.size()) {
        const std::uint32_t len = get_u32be(bytes, pos);
        if (len > bytes.size() - pos - 12) throw fail("chunk runs past end of stream");
        const std::uint8_t* type = bytes.data() + pos + 4;
        const std::uint8_t* payload = type + 4;
        uLong crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, type, len + 4);
        if (static_cast<std::uint32_t>(crc) != get_u32be(bytes, pos + 8 + len)) throw fail("chunk CRC mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw fail("bad IHDR length");
            width = get_u32be(bytes, pos + 8);
            height = get_u32be(bytes, pos + 12);
            const std::uint8_t depth = payload[8];
            const std::uint8_t color = payload[9];
            if (depth != 8 || (color != 2 && color != 6) || payload[10] != 0 || payload[11] != 0 || payload[12] != 0) {
                throw fail("only non-interlaced 8-bit RGB/RGBA is supported");
            }
            channels = color == 2 ? 3 : 4;
            have_header = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            have_end = true;
            break;
        } else if ((type[0] & 0x20) == 0) {
            throw fail("unknown critical chunk");
        }
        pos += 12 + len;
    }
    if (!have_header || !have_end) throw fail("missing IHDR or IEND");
    if (width == 0 || height == 0 || std::size_t{width} * height > kMaxPixels) throw fail("bad dimensions");

    const std::size_t stride = std::size_t{width} * channels;
    std::vector<std::uint8_t> raw(std::size_t{height} * (stride + 1));
    uLongf raw_size = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_size != raw.size()) {
        throw fail("inflate failed or wrong scanline volume");
    }

    std::vector<std::uint8_t> plane(std::size_t{height} * stride);
    for (std::size_t y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* dst = plane.data() + y * stride;
        const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int a = x >= channels ? dst[x - channels] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= channels) ? up[x - channels] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw fail("unknown scanline filter");
            }
            dst[x] = static_cast<std::uint8_t>(v);
        }
    }

    RgbImage img{ImageGeometry(width, height), {}, false};
    if (channels == 3) {
        img.channels = std::move(plane);
    } else {
        img.channels.resize(img.geometry.capacity());
        for (std::size_t p = 0; p < img.geometry.pixels(); ++p) {
            std::copy_n(plane.begin() + static_cast<std::ptrdiff_t>(4 * p), 3,
                        img.channels.begin() + static_cast<std::ptrdiff_t>(3 * p));
        }
    }
    return img;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality) {
    if (img.geometry.width() > JPEG_MAX_DIMENSION || img.geometry.height() > JPEG_MAX_DIMENSION) {
        throw Error(ErrorCode::EncodeFailure, "image too large for JPEG");
    }
    jpeg_compress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buffer);
        throw Error(ErrorCode::EncodeFailure, "libjpeg error");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(img.geometry.width());
    cinfo.image_height = static_cast<JDIMENSION>(img.geometry.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    const std::size_t stride = 3 * img.geometry.width();
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(img.channels.data() + cinfo.next_scanline * stride);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<std::uint8_t> out(buffer, buffer + size);
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    return out;
}

}  // namespace

ImageGeometry::ImageGeometry(std::size_t width, std::size_t height) : width_(width), height_(height) {
    if (width == 0 || height == 0) {
        throw Error(ErrorCode::BadGeometry, std::to_string(width) + "x" + std::to_string(height));
    }
}

RgbImage pack_rgb(std::span<const std::uint8_t> bytes, ImageGeometry geom) {
    RgbImage img{geom, std::vector<std::uint8_t>(geom.capacity(), 0), bytes.size() > geom.capacity()};
    const std::size_t n = std::min(bytes.size(), geom.capacity());
    std::copy_n(bytes.begin(), n, img.channels.begin());
    return img;
}

RgbImage xml_to_image(std::span<const std::uint8_t> xml_bytes, ImageGeometry geom) { return pack_rgb(xml_bytes, geom); }

std::vector<std::uint8_t> encode_image(const RgbImage& img, Format format, int jpeg_quality) {
    switch (format) {
        case Format::LosslessPng: return encode_png(img);
        case Format::Jpeg: return encode_jpeg(img, jpeg_quality);
    }
    throw Error(ErrorCode::EncodeFailure, "unknown format");
}

RgbImage decode_image(std::span<const std::uint8_t> bytes) { return decode_png(bytes); }

}  // namespace bido::image
