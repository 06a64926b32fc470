#include "ento/synth.hpp"

#include <algorithm>
#include <cmath>

#include "ento/errors.hpp"

namespace ento::synth {
namespace {

constexpr double kBodySat = 0.80, kBodyVal = 0.95;
constexpr double kStripeSat = 0.80, kStripeVal = 0.55;
constexpr double kHeadSat = 0.50, kHeadVal = 0.65;
constexpr double kLegSat = 0.45, kLegVal = 0.55;
// Stripes fill the same total body fraction for any stripe count, so the
// counts are indistinguishable once the bands blur together.
constexpr double kStripeSpan = 0.8;
constexpr double kStripeFill = 0.45;

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb shade(double hue, double s, double v) {
  Rgb c;
  hsv_to_rgb(hue, s, v, c.r, c.g, c.b);
  return c;
}

double dist_to_segment(double px, double py, double ax, double ay, double bx,
                       double by) {
  double dx = bx - ax, dy = by - ay;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double qx = ax + t * dx, qy = ay + t * dy;
  return std::hypot(px - qx, py - qy);
}

struct Leg {
  double ax, ay, bx, by;  // body frame endpoints
};

bool rects_intersect(const detect::BBox& a, const detect::BBox& b) {
  return a.x < b.right() && b.x < a.right() && a.y < b.bottom() &&
         b.y < a.bottom();
}

detect::BBox expand_rect(const detect::BBox& b, int pad, int w, int h) {
  int x0 = std::max(0, b.x - pad);
  int y0 = std::max(0, b.y - pad);
  int x1 = std::min(w, b.right() + pad);
  int y1 = std::min(h, b.bottom() + pad);
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

}  // namespace

InsectStyle style_for_class(int class_id) {
  if (class_id < 0 || class_id >= kClassCount)
    throw DomainError("class id out of range");
  InsectStyle s;
  int group = class_id / 2;
  s.hue = group * 45.0;
  s.stripes = (class_id % 2 == 0) ? 3 : 8;
  s.aspect = 1.7 + 0.12 * (group % 4);
  s.leg_pairs = 2 + class_id % 3;
  return s;
}

Pose sample_pose(int width, int height, rng::Generator& rng,
                 double base_angle, double angle_jitter) {
  if (width <= 0 || height <= 0)
    throw DomainError("frame dimensions must be positive");
  Pose p;
  p.length = rng.uniform(0.22, 0.30) * std::min(width, height);
  double reach = 0.80 * p.length;  // legs and head stay within this radius
  auto place = [&](int dim) {
    double jitter = rng.uniform(-0.18, 0.18) * dim;
    double lo = std::min(reach, dim / 2.0);
    double hi = std::max(dim - reach, dim / 2.0);
    return std::clamp(dim / 2.0 + jitter, lo, hi);
  };
  p.cx = place(width);
  p.cy = place(height);
  p.angle = base_angle + rng.uniform(-angle_jitter, angle_jitter);
  return p;
}

void fill_background(Frame& frame, rng::Generator& rng, int base, int jitter) {
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      int g = base;
      if (jitter > 0) g += static_cast<int>(rng.below(2 * jitter + 1)) - jitter;
      auto v = static_cast<std::uint8_t>(std::clamp(g, 0, 255));
      frame.set_px(x, y, v, v, v);
    }
}

detect::BBox render_insect(Frame& frame, detect::Mask& mask,
                           const InsectStyle& style, const Pose& pose) {
  if (mask.width != frame.width || mask.height != frame.height)
    throw ShapeError("mask does not match frame");
  if (!(pose.length > 2) || !(style.aspect > 1) || style.stripes < 1)
    throw DomainError("degenerate insect parameters");

  double halfl = pose.length / 2.0;
  double halfw = halfl / style.aspect;
  double head_u = 0.78 * halfl;
  double head_r = 0.76 * halfw;
  double leg_t = std::max(1.0, 0.12 * halfw);

  std::vector<Leg> legs;
  int pairs = style.leg_pairs;
  for (int i = 0; i < pairs; ++i) {
    double f = pairs == 1 ? 0.5 : static_cast<double>(i) / (pairs - 1);
    double u = halfl * (-0.55 + 1.10 * f);
    double lean = (i - (pairs - 1) / 2.0) * 0.35 * halfw;
    for (int side : {-1, 1}) {
      Leg leg;
      leg.ax = u;
      leg.ay = side * 0.5 * halfw;
      leg.bx = u + lean;
      leg.by = side * 1.9 * halfw;
      legs.push_back(leg);
    }
  }

  Rgb body = shade(style.hue, kBodySat, kBodyVal);
  Rgb stripe = shade(style.hue, kStripeSat, kStripeVal);
  Rgb head = shade(style.hue, kHeadSat, kHeadVal);
  Rgb leg_c = shade(style.hue, kLegSat, kLegVal);

  double reach = std::max(halfl + head_r, 1.9 * halfw + leg_t) + 2.0;
  int x0 = std::max(0, static_cast<int>(std::floor(pose.cx - reach)));
  int x1 = std::min(frame.width - 1, static_cast<int>(std::ceil(pose.cx + reach)));
  int y0 = std::max(0, static_cast<int>(std::floor(pose.cy - reach)));
  int y1 = std::min(frame.height - 1, static_cast<int>(std::ceil(pose.cy + reach)));

  double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  int minx = frame.width, miny = frame.height, maxx = -1, maxy = -1;

  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double dx = x + 0.5 - pose.cx;
      double dy = y + 0.5 - pose.cy;
      double u = dx * ca + dy * sa;
      double v = -dx * sa + dy * ca;

      const Rgb* c = nullptr;
      double hu = u - head_u;
      if (hu * hu + v * v <= head_r * head_r) {
        c = &head;
      } else {
        double eu = u / halfl, ev = v / halfw;
        if (eu * eu + ev * ev <= 1.0) {
          c = &body;
          double t = (u / halfl + kStripeSpan) / (2.0 * kStripeSpan);
          if (t >= 0.0 && t < 1.0) {
            double frac = t * style.stripes;
            frac -= std::floor(frac);
            if (std::abs(frac - 0.5) <= kStripeFill / 2.0) c = &stripe;
          }
        } else {
          for (const Leg& leg : legs) {
            if (dist_to_segment(u, v, leg.ax, leg.ay, leg.bx, leg.by) <=
                leg_t / 2.0) {
              c = &leg_c;
              break;
            }
          }
        }
      }
      if (!c) continue;
      frame.set_px(x, y, c->r, c->g, c->b);
      mask.set(x, y, true);
      minx = std::min(minx, x);
      miny = std::min(miny, y);
      maxx = std::max(maxx, x);
      maxy = std::max(maxy, y);
    }
  }

  if (maxx < minx) throw DomainError("insect rendered outside the frame");
  return {minx, miny, maxx - minx + 1, maxy - miny + 1};
}

void add_dust(Frame& frame, const detect::BBox& keep_out, int count,
              int max_side, rng::Generator& rng) {
  if (max_side < 1) throw DomainError("max_side must be at least 1");
  std::vector<detect::BBox> taken;
  taken.push_back(expand_rect(keep_out, 3, frame.width, frame.height));
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 60; ++attempt) {
      int w = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side)));
      int h = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side)));
      if (frame.width <= w || frame.height <= h) break;
      int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.width - w)));
      int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.height - h)));
      detect::BBox speck{x, y, w, h};
      detect::BBox padded = expand_rect(speck, 1, frame.width, frame.height);
      bool clear = true;
      for (const auto& t : taken)
        if (rects_intersect(padded, t)) {
          clear = false;
          break;
        }
      if (!clear) continue;
      auto g = static_cast<std::uint8_t>(190 + rng.below(46));
      for (int yy = y; yy < y + h; ++yy)
        for (int xx = x; xx < x + w; ++xx) frame.set_px(xx, yy, g, g, g);
      taken.push_back(speck);
      break;
    }
  }
}

void hsv_to_rgb(double h, double s, double v, std::uint8_t& r,
                std::uint8_t& g, std::uint8_t& b) {
  if (s < 0 || s > 1 || v < 0 || v > 1)
    throw DomainError("saturation and value must be in [0,1]");
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  double c = v * s;
  double hp = h / 60.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp)) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  double m = v - c;
  auto q = [&](double f) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(f + m, 0.0, 1.0) * 255.0));
  };
  r = q(r1);
  g = q(g1);
  b = q(b1);
}

}  // namespace ento::synth
