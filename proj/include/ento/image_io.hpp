#pragma once

#include <string>

#include "ento/detect.hpp"
#include "ento/frame.hpp"

namespace ento::io {

// Binary PPM (P6) and PGM (P5), maxval 255. Headers may contain '#' comments.
// Masks are stored as PGM with 0 = background; on read any value >= 128 is
// treated as set.

Frame read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Frame& frame);

detect::Mask read_pgm_mask(const std::string& path);
void write_pgm_mask(const std::string& path, const detect::Mask& mask);

// Grayscale image with arbitrary byte values, used for heatmaps.
void write_pgm_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace ento::io
