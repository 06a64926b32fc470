#include "ento/detect.hpp"

#include <algorithm>
#include <cmath>

namespace ento::detect {

int scaled_min_area(int base_min_area, int image_w, int image_h) {
  if (base_min_area < 1 || image_w < 1 || image_h < 1)
    throw DomainError("scaled_min_area: arguments must be >= 1");
  double scale = (double(image_w) * image_h) / (1440.0 * 1080.0);
  long long scaled = llround(base_min_area * scale);
  return int(std::max(1ll, scaled));
}

Mask threshold_mask(const Frame& frame, int threshold) {
  Mask mask(frame.width, frame.height);
  const std::uint8_t* p = frame.pixels.data();
  for (std::size_t i = 0; i < mask.bits.size(); ++i, p += 3) {
    mask.bits[i] = luma601(p[0], p[1], p[2]) > threshold ? 1 : 0;
  }
  return mask;
}

std::vector<Component> connected_components(const Mask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw DomainError("connected_components: connectivity must be 4 or 8");

  const int w = mask.width, h = mask.height;
  std::vector<std::uint8_t> visited(mask.bits.size(), 0);
  std::vector<Component> out;
  std::vector<int> stack;

  static const int dx8[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static const int dy8[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  const int ndirs = connectivity == 4 ? 4 : 8;

  for (int start = 0; start < w * h; ++start) {
    if (!mask.bits[start] || visited[start]) continue;
    long long area = 0;
    int min_x = w, max_x = -1, min_y = h, max_y = -1;
    stack.clear();
    stack.push_back(start);
    visited[start] = 1;
    while (!stack.empty()) {
      int idx = stack.back();
      stack.pop_back();
      int x = idx % w, y = idx / w;
      ++area;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
      for (int d = 0; d < ndirs; ++d) {
        int nx = x + dx8[d], ny = y + dy8[d];
        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
        int nidx = ny * w + nx;
        if (mask.bits[nidx] && !visited[nidx]) {
          visited[nidx] = 1;
          stack.push_back(nidx);
        }
      }
    }
    out.push_back({area, BBox{min_x, min_y, max_x - min_x + 1, max_y - min_y + 1}});
  }

  std::sort(out.begin(), out.end(), [](const Component& a, const Component& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.bbox.y != b.bbox.y) return a.bbox.y < b.bbox.y;
    return a.bbox.x < b.bbox.x;
  });
  return out;
}

BBox mask_to_bbox(const Mask& mask, const CropConfig& cfg) {
  if (cfg.min_area < 1) throw DomainError("mask_to_bbox: min_area must be >= 1");
  auto components = connected_components(mask, cfg.connectivity);
  for (const Component& c : components) {
    if (c.area >= cfg.min_area) return c.bbox;  // list is sorted largest-first
  }
  throw NoInsectError("mask_to_bbox: no component with area >= " +
                      std::to_string(cfg.min_area));
}

namespace {
// Round to nearest integer with halves going down: 2.5 -> 2.
int round_half_down(double v) { return int(std::ceil(v - 0.5)); }
}  // namespace

BBox square_expand(const BBox& bbox, double margin, int image_w, int image_h) {
  if (margin < 0) throw DomainError("square_expand: margin must be >= 0");
  int side = int(std::ceil(std::max(bbox.w, bbox.h) * (1.0 + 2.0 * margin)));
  side = std::min(side, std::min(image_w, image_h));
  side = std::max(side, 1);

  double cx = bbox.x + bbox.w / 2.0;
  double cy = bbox.y + bbox.h / 2.0;
  int x = round_half_down(cx - side / 2.0);
  int y = round_half_down(cy - side / 2.0);
  x = std::clamp(x, 0, image_w - side);
  y = std::clamp(y, 0, image_h - side);
  return BBox{x, y, side, side};
}

Frame crop(const Frame& frame, const BBox& bbox) {
  if (bbox.w < 1 || bbox.h < 1 || bbox.x < 0 || bbox.y < 0 ||
      bbox.right() > frame.width || bbox.bottom() > frame.height)
    throw DomainError("crop: bbox out of frame bounds");
  Frame out(bbox.w, bbox.h, 0, frame.timestamp);
  for (int y = 0; y < bbox.h; ++y) {
    const std::uint8_t* src = frame.px(bbox.x, bbox.y + y);
    std::uint8_t* dst = out.px(0, y);
    std::copy(src, src + std::size_t(bbox.w) * 3, dst);
  }
  return out;
}

Frame resize_bilinear(const Frame& frame, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1)
    throw DomainError("resize_bilinear: output dims must be >= 1");
  Frame out(out_w, out_h, 0, frame.timestamp);

  const int sw = frame.width, sh = frame.height;
  const double sx = double(sw) / out_w;
  const double sy = double(sh) / out_h;

  for (int dy = 0; dy < out_h; ++dy) {
    double s_y = (dy + 0.5) * sy - 0.5;
    s_y = std::clamp(s_y, 0.0, double(sh - 1));
    int y0 = int(std::floor(s_y));
    int y1 = std::min(y0 + 1, sh - 1);
    double fy = s_y - y0;
    for (int dx = 0; dx < out_w; ++dx) {
      double s_x = (dx + 0.5) * sx - 0.5;
      s_x = std::clamp(s_x, 0.0, double(sw - 1));
      int x0 = int(std::floor(s_x));
      int x1 = std::min(x0 + 1, sw - 1);
      double fx = s_x - x0;

      const std::uint8_t* p00 = frame.px(x0, y0);
      const std::uint8_t* p01 = frame.px(x1, y0);
      const std::uint8_t* p10 = frame.px(x0, y1);
      const std::uint8_t* p11 = frame.px(x1, y1);
      std::uint8_t* dst = out.px(dx, dy);
      for (int c = 0; c < 3; ++c) {
        double top = (1.0 - fx) * p00[c] + fx * p01[c];
        double bot = (1.0 - fx) * p10[c] + fx * p11[c];
        double v = (1.0 - fy) * top + fy * bot;
        dst[c] = std::uint8_t(std::lround(v));  // ties away from zero
      }
    }
  }
  return out;
}

double bbox_iou(const BBox& a, const BBox& b) {
  if (a.w < 1 || a.h < 1 || b.w < 1 || b.h < 1)
    throw DomainError("bbox_iou: boxes must have positive size");
  long long ix = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  long long iy = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  long long inter = ix * iy;
  long long uni = a.area() + b.area() - inter;
  return double(inter) / double(uni);
}

double mask_iou(const Mask& pred, const Mask& truth) {
  if (!pred.same_dims(truth)) throw ShapeError("mask_iou: dimension mismatch");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    bool p = pred.bits[i] != 0, t = truth.bits[i] != 0;
    inter += (p && t);
    uni += (p || t);
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

}  // namespace ento::detect
