#pragma once

#include <string>

#include "fewtab/image.hpp"
#include "fewtab/transform.hpp"

namespace fewtab {

/// Write an image as an 8-bit RGB PNG, byte = round(255 * pixel).
void write_png(const Image& img, const std::string& path);

inline void render_png(const TabularImage& img, const std::string& path) {
    write_png(img.pixels, path);
}

/// Read an 8-bit PNG back into a [0, 1] float image (RGB; gray and palette
/// files are expanded, 16-bit depth is stripped).
Image read_png(const std::string& path);

/// Raw little-endian float32 dump in CHW order; full fidelity next to the
/// quantized PNG.
void write_tensor(const Image& img, const std::string& path);
Image read_tensor(const std::string& path, int channels = kImageChannels,
                  int height = kImageSide, int width = kImageSide);

}  // namespace fewtab
