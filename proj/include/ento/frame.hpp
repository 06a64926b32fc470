#pragma once

#include <cstdint>
#include <vector>

#include "ento/errors.hpp"

namespace ento {

// One captured image: owned 8-bit RGB raster plus the capture time
// (seconds since stream start).
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
  double timestamp = 0.0;

  Frame() = default;

  Frame(int w, int h, std::uint8_t fill = 0, double ts = 0.0)
      : width(w), height(h), timestamp(ts) {
    if (w < 1 || h < 1) throw DomainError("frame: dimensions must be >= 1");
    pixels.assign(std::size_t(w) * h * 3, fill);
  }

  std::uint8_t* px(int x, int y) {
    return pixels.data() + (std::size_t(y) * width + x) * 3;
  }
  const std::uint8_t* px(int x, int y) const {
    return pixels.data() + (std::size_t(y) * width + x) * 3;
  }

  void set_px(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = px(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  bool same_dims(const Frame& other) const {
    return width == other.width && height == other.height;
  }

  bool operator==(const Frame& other) const {
    return width == other.width && height == other.height &&
           timestamp == other.timestamp && pixels == other.pixels;
  }
};

// Rec.601 luma; weights sum to 1 so gray pixels map to their own value.
inline double luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

}  // namespace ento
