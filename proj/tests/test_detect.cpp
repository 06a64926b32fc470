#include <doctest.h>

#include <algorithm>
#include <queue>
#include <vector>

#include "ento/detect.hpp"
#include "ento/errors.hpp"
#include "ento/frame.hpp"
#include "ento/rng.hpp"

using namespace ento;
using doctest::Approx;

namespace {

detect::Mask mask4x4(std::uint16_t bits) {
  detect::Mask m(4, 4);
  for (int i = 0; i < 16; ++i) m.bits[i] = (bits >> i) & 1;
  return m;
}

// Independent flood fill used as the reference for connected_components.
std::vector<detect::Component> oracle_components(const detect::Mask& m,
                                                 int connectivity) {
  const int w = m.width, h = m.height;
  std::vector<int> label(w * h, -1);
  std::vector<detect::Component> out;
  for (int s = 0; s < w * h; ++s) {
    if (!m.bits[s] || label[s] >= 0) continue;
    int id = int(out.size());
    long long area = 0;
    int minx = w, maxx = -1, miny = h, maxy = -1;
    std::queue<int> q;
    q.push(s);
    label[s] = id;
    while (!q.empty()) {
      int idx = q.front();
      q.pop();
      int x = idx % w, y = idx / w;
      ++area;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (connectivity == 4 && dx != 0 && dy != 0) continue;
          int nx = x + dx, ny = y + dy;
          if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
          int n = ny * w + nx;
          if (m.bits[n] && label[n] < 0) {
            label[n] = id;
            q.push(n);
          }
        }
    }
    out.push_back(
        {area, detect::BBox{minx, miny, maxx - minx + 1, maxy - miny + 1}});
  }
  std::sort(out.begin(), out.end(),
            [](const detect::Component& a, const detect::Component& b) {
              if (a.area != b.area) return a.area > b.area;
              if (a.bbox.y != b.bbox.y) return a.bbox.y < b.bbox.y;
              return a.bbox.x < b.bbox.x;
            });
  return out;
}

bool same_components(const std::vector<detect::Component>& a,
                     const std::vector<detect::Component>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].area != b[i].area || !(a[i].bbox == b[i].bbox)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("detect") {

TEST_CASE("threshold mask uses strict luma comparison") {
  Frame f(3, 1);
  f.set_px(0, 0, 100, 100, 100);  // luma 100
  f.set_px(1, 0, 101, 101, 101);  // luma 101
  f.set_px(2, 0, 0, 0, 0);
  auto m = detect::threshold_mask(f, 100);
  CHECK(m.count() == 1);
  CHECK(m.test(1, 0));
  CHECK_FALSE(m.test(0, 0));
}

TEST_CASE("connectivity 8 bridges diagonals, 4 does not") {
  detect::Mask m(2, 2);
  m.set(0, 0, true);
  m.set(1, 1, true);
  CHECK(detect::connected_components(m, 8).size() == 1);
  CHECK(detect::connected_components(m, 4).size() == 2);
  CHECK_THROWS_AS(detect::connected_components(m, 6), DomainError);
}

TEST_CASE("components sort by area then top-left") {
  detect::Mask m(8, 3);
  // area 3 at x 0..2, area 3 at x 4..6 (same row), area 1 at (0,2)
  for (int x = 0; x < 3; ++x) m.set(x, 0, true);
  for (int x = 4; x < 7; ++x) m.set(x, 0, true);
  m.set(0, 2, true);
  auto comps = detect::connected_components(m, 4);
  REQUIRE(comps.size() == 3);
  CHECK(comps[0].bbox.x == 0);
  CHECK(comps[0].bbox.y == 0);
  CHECK(comps[1].bbox.x == 4);
  CHECK(comps[2].area == 1);
}

TEST_CASE("exhaustive 4x4 components against a flood fill oracle") {
  // all 65536 masks, both connectivities (acceptance rechecks with timing)
  for (int bits = 0; bits < 65536; ++bits) {
    auto m = mask4x4(std::uint16_t(bits));
    for (int conn : {4, 8}) {
      auto got = detect::connected_components(m, conn);
      auto want = oracle_components(m, conn);
      if (!same_components(got, want)) {
        CAPTURE(bits);
        CAPTURE(conn);
        REQUIRE(same_components(got, want));
      }
    }
  }
  CHECK(true);
}

TEST_CASE("mask_to_bbox keeps the largest component over min_area") {
  detect::Mask m(10, 10);
  for (int y = 2; y < 6; ++y)
    for (int x = 3; x < 7; ++x) m.set(x, y, true);  // area 16
  m.set(9, 9, true);                                // dust speck
  detect::CropConfig cfg;
  cfg.min_area = 5;
  auto box = detect::mask_to_bbox(m, cfg);
  CHECK(box == detect::BBox{3, 2, 4, 4});

  cfg.min_area = 17;
  CHECK_THROWS_AS(detect::mask_to_bbox(m, cfg), NoInsectError);
  cfg.min_area = 0;
  CHECK_THROWS_AS(detect::mask_to_bbox(m, cfg), DomainError);
}

TEST_CASE("empty mask has no insect") {
  detect::Mask m(5, 5);
  detect::CropConfig cfg;
  cfg.min_area = 1;
  CHECK_THROWS_AS(detect::mask_to_bbox(m, cfg), NoInsectError);
}

TEST_CASE("scaled min area is proportional to the pixel count") {
  CHECK(detect::scaled_min_area(50, 1440, 1080) == 50);
  CHECK(detect::scaled_min_area(50, 720, 540) == 13);   // llround(12.5)
  CHECK(detect::scaled_min_area(50, 96, 96) == 1);      // floor is 1
  CHECK(detect::scaled_min_area(200, 2880, 2160) == 800);
  CHECK_THROWS_AS(detect::scaled_min_area(0, 10, 10), DomainError);
}

TEST_CASE("square expansion frozen cases") {
  // side = ceil(max(w,h) * (1 + 2*margin)), centered with halves going down
  auto b1 = detect::square_expand({10, 10, 5, 3}, 0.05, 100, 100);
  // side = ceil(5*1.1) = 6; center (12.5, 11.5); corner = ceil(c - 3.5)
  CHECK(b1 == detect::BBox{9, 8, 6, 6});

  auto b2 = detect::square_expand({0, 0, 4, 4}, 0.0, 100, 100);
  CHECK(b2 == detect::BBox{0, 0, 4, 4});

  // clamped into the image at the border
  auto b3 = detect::square_expand({0, 0, 10, 2}, 0.05, 100, 100);
  CHECK(b3.w == 11);
  CHECK(b3.x == 0);
  CHECK(b3.y == 0);

  // side capped by the frame itself
  auto b4 = detect::square_expand({2, 2, 30, 5}, 0.05, 20, 20);
  CHECK(b4 == detect::BBox{0, 0, 20, 20});

  CHECK_THROWS_AS(detect::square_expand({0, 0, 4, 4}, -0.1, 100, 100),
                  DomainError);
}

TEST_CASE("square expansion stays inside and covers the box") {
  rng::Generator g(11);
  for (int i = 0; i < 500; ++i) {
    int w = 8 + int(g.below(200)), h = 8 + int(g.below(200));
    int bw = 1 + int(g.below(std::uint64_t(w)));
    int bh = 1 + int(g.below(std::uint64_t(h)));
    int bx = int(g.below(std::uint64_t(w - bw + 1)));
    int by = int(g.below(std::uint64_t(h - bh + 1)));
    double margin = g.uniform(0.0, 0.3);
    auto s = detect::square_expand({bx, by, bw, bh}, margin, w, h);
    CHECK(s.w == s.h);
    CHECK(s.x >= 0);
    CHECK(s.y >= 0);
    CHECK(s.right() <= w);
    CHECK(s.bottom() <= h);
    CHECK(s.w >= std::min(std::max(bw, bh), std::min(w, h)));
  }
}

TEST_CASE("crop copies pixels and bounds-checks") {
  Frame f(4, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      f.set_px(x, y, std::uint8_t(10 * x), std::uint8_t(10 * y), 7);
  auto c = detect::crop(f, {1, 1, 2, 2});
  CHECK(c.width == 2);
  CHECK(c.height == 2);
  CHECK(c.px(0, 0)[0] == 10);
  CHECK(c.px(0, 0)[1] == 10);
  CHECK(c.px(1, 1)[0] == 20);
  CHECK(c.px(1, 1)[1] == 20);
  CHECK_THROWS_AS(detect::crop(f, {3, 0, 2, 2}), DomainError);
  CHECK_THROWS_AS(detect::crop(f, {-1, 0, 2, 2}), DomainError);
}

TEST_CASE("bilinear resize identity and averaging") {
  Frame f(2, 2);
  f.set_px(0, 0, 0, 0, 0);
  f.set_px(1, 0, 100, 100, 100);
  f.set_px(0, 1, 100, 100, 100);
  f.set_px(1, 1, 200, 200, 200);

  auto same = detect::resize_bilinear(f, 2, 2);
  CHECK(same == f);

  auto one = detect::resize_bilinear(f, 1, 1);
  CHECK(one.px(0, 0)[0] == 100);  // mean of the four corners

  // upsample with half-pixel centers: d=0 maps to s=-0.25 clamped to 0
  Frame g(2, 1);
  g.set_px(0, 0, 0, 0, 0);
  g.set_px(1, 0, 100, 100, 100);
  auto up = detect::resize_bilinear(g, 4, 1);
  CHECK(up.px(0, 0)[0] == 0);
  CHECK(up.px(1, 0)[0] == 25);
  CHECK(up.px(2, 0)[0] == 75);
  CHECK(up.px(3, 0)[0] == 100);

  CHECK_THROWS_AS(detect::resize_bilinear(f, 0, 2), DomainError);
}

TEST_CASE("bbox iou") {
  CHECK(detect::bbox_iou({0, 0, 4, 4}, {0, 0, 4, 4}) == Approx(1.0));
  CHECK(detect::bbox_iou({0, 0, 4, 4}, {4, 4, 4, 4}) == Approx(0.0));
  CHECK(detect::bbox_iou({0, 0, 4, 4}, {2, 0, 4, 4}) ==
        Approx(8.0 / 24.0));  // overlap 2x4 over union 32-8
  CHECK_THROWS_AS(detect::bbox_iou({0, 0, 0, 4}, {0, 0, 4, 4}), DomainError);
}

TEST_CASE("mask iou counts pixels, empty pair is a perfect match") {
  detect::Mask a(4, 4), b(4, 4);
  CHECK(detect::mask_iou(a, b) == Approx(1.0));
  a.set(0, 0, true);
  a.set(1, 0, true);
  b.set(1, 0, true);
  b.set(2, 0, true);
  CHECK(detect::mask_iou(a, b) == Approx(1.0 / 3.0));
  detect::Mask c(3, 4);
  CHECK_THROWS_AS(detect::mask_iou(a, c), ShapeError);
}

}  // TEST_SUITE
