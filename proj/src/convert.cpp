#include "bido/convert.hpp"

namespace bido {

image::RgbImage dex_to_image(std::span<const std::uint8_t> raw, image::ImageGeometry geom, dex::ParseOptions opts) {
    const dex::DexHeader h = dex::parse_header(raw, opts);
    const dex::IndexBytes index = dex::extract_index_bytes(raw, h);
    return image::pack_rgb(index.bytes, geom);
}

}  // namespace bido
