#pragma once

#include <cstdint>
#include <span>

#include "bido/dex.hpp"
#include "bido/image.hpp"

namespace bido {

// DEX stream -> index section -> RGB image.
image::RgbImage dex_to_image(std::span<const std::uint8_t> raw, image::ImageGeometry geom,
                             dex::ParseOptions opts = {});

}  // namespace bido
