#pragma once

#include <cstdint>
#include <vector>

#include "ento/frame.hpp"

namespace ento::detect {

// Binary insect mask, row-major, one byte per pixel (0 or 1).
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;

  Mask(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) throw DomainError("mask: dimensions must be >= 1");
    bits.assign(std::size_t(w) * h, 0);
  }

  bool test(int x, int y) const { return bits[std::size_t(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) { bits[std::size_t(y) * width + x] = v ? 1 : 0; }

  long long count() const {
    long long n = 0;
    for (std::uint8_t b : bits) n += (b != 0);
    return n;
  }

  bool same_dims(const Mask& other) const {
    return width == other.width && height == other.height;
  }

  bool operator==(const Mask& other) const = default;
};

// Axis-aligned box; (x, y) is the top-left pixel, w/h in pixels.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const { return (long long)w * h; }
  int right() const { return x + w; }    // exclusive
  int bottom() const { return y + h; }   // exclusive

  bool contains(const BBox& inner) const {
    return inner.x >= x && inner.y >= y && inner.right() <= right() &&
           inner.bottom() <= bottom();
  }

  bool operator==(const BBox& other) const = default;
};

struct CropConfig {
  int connectivity = 8;     // 4 or 8
  int min_area = 50;        // dust threshold in pixels, at 1440x1080
  double margin = 0.05;     // fraction of box side added per side
  int target_size = 224;    // square side after resize
};

// Scale the dust threshold when the image is not 1440x1080.
int scaled_min_area(int base_min_area, int image_w, int image_h);

// Baseline segmentation: bit set iff pixel luma > threshold.
Mask threshold_mask(const Frame& frame, int threshold);

struct Component {
  long long area = 0;
  BBox bbox;
};

// Maximal connected components of the set bits, 4- or 8-adjacency.
// Ordered by descending area, ties by (bbox.y, bbox.x).
std::vector<Component> connected_components(const Mask& mask, int connectivity);

// Tight box of the largest component with area >= min_area.
// Throws NoInsectError when nothing survives the filter.
BBox mask_to_bbox(const Mask& mask, const CropConfig& cfg);

// Expand a box to a square with a relative margin, kept inside the image.
// side = ceil(max(w,h) * (1 + 2*margin)); the square is centered on the box
// center with the corner rounded half-down, translated inside the image,
// and the side clamped to min(image_w, image_h) if it would not fit.
BBox square_expand(const BBox& bbox, double margin, int image_w, int image_h);

Frame crop(const Frame& frame, const BBox& bbox);

// Bilinear resampling with the half-pixel-center convention:
// source coordinate s = (d + 0.5) * (src / dst) - 0.5, clamped to
// [0, src - 1]; channels interpolated independently; rounded to nearest,
// ties away from zero.
Frame resize_bilinear(const Frame& frame, int out_w, int out_h);

double bbox_iou(const BBox& a, const BBox& b);

// |a AND b| / |a OR b|; 1.0 when both masks are empty.
double mask_iou(const Mask& pred, const Mask& truth);

}  // namespace ento::detect
