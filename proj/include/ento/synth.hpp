#pragma once

#include <cstdint>

#include "ento/detect.hpp"
#include "ento/frame.hpp"
#include "ento/rng.hpp"

namespace ento::synth {

inline constexpr int kClassCount = 16;

// Classes form 8 hue groups of two; the two members differ only in stripe
// count, a high frequency cue that washes out when a whole frame is shrunk
// to net input size but survives in a tight crop.
struct InsectStyle {
  double hue = 0;        // degrees
  int stripes = 3;       // dark bands across the body
  double aspect = 1.7;   // body length over width
  int leg_pairs = 2;
};

InsectStyle style_for_class(int class_id);

struct Pose {
  double cx = 0;      // body center, pixels
  double cy = 0;
  double length = 0;  // body length, pixels
  double angle = 0;   // radians, 0 points the head along +x
};

// Pose with the whole insect (legs included) inside the frame. Body length is
// drawn from 0.22..0.30 of the shorter frame side, the angle from
// base_angle +- angle_jitter.
Pose sample_pose(int width, int height, rng::Generator& rng,
                 double base_angle, double angle_jitter);

// Uniform gray base +- per pixel jitter.
void fill_background(Frame& frame, rng::Generator& rng, int base = 32,
                     int jitter = 6);

// Paints the insect over the frame, sets covered mask pixels, returns the
// tight bounding box of everything painted.
detect::BBox render_insect(Frame& frame, detect::Mask& mask,
                           const InsectStyle& style, const Pose& pose);

// Bright specks that stay clear of keep_out and of each other, each at most
// max_side x max_side pixels. Mask pixels are not touched.
void add_dust(Frame& frame, const detect::BBox& keep_out, int count,
              int max_side, rng::Generator& rng);

// h in degrees (wraps), s and v in [0,1].
void hsv_to_rgb(double h, double s, double v, std::uint8_t& r,
                std::uint8_t& g, std::uint8_t& b);

}  // namespace ento::synth
