#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cxrage/tensor.hpp"

namespace cxrage {

// Reads an 8-bit PNG (palette/RGB/RGBA accepted, 16-bit depth narrowed) or a
// PGM (plain P2 or raw P5), collapsing color to the channel mean. Returns a
// 1xHxW tensor with values in [0,1]. Throws std::runtime_error naming the
// path on unreadable or unsupported files.
Tensor<double> read_gray_image(const std::string& path);

// Plain-text P2 output, values rounded to 0..255.
void write_pgm(const std::string& path, const Tensor<double>& image);

// 8-bit RGB rows, top to bottom, 3 bytes per pixel. Uses a fixed filter and
// compression level so identical pixels give identical files.
void write_rgb_png(const std::string& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb);

}  // namespace cxrage
