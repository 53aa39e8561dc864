#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "patchforge/error.hpp"
#include "patchforge/foreground.hpp"
#include "patchforge/rng.hpp"
#include "test_util.hpp"

using namespace patchforge;
using patchforge::testing::TempDir;

namespace {

BinaryMask rect_mask(int w, int h, int x0, int y0, int rw, int rh, double scale = 1.0) {
  BinaryMask m(w, h, scale);
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) {
      m.set(x, y, true);
    }
  }
  return m;
}

double rect_intersection(double ax, double ay, double aw, double ah, const Rect& r) {
  const double w = std::max(0.0, std::min(ax + aw, double(r.x + r.w)) - std::max(ax, double(r.x)));
  const double h = std::max(0.0, std::min(ay + ah, double(r.y + r.h)) - std::max(ay, double(r.y)));
  return w * h;
}

// Square ring with a square hole.
ForegroundPolygon donut() {
  Ring outer{{0, 0}, {100, 0}, {100, 100}, {0, 100}};
  Ring hole{{25, 25}, {75, 25}, {75, 75}, {25, 75}};
  return ForegroundPolygon({outer, hole}, 1.0);
}

}  // namespace

TEST(MaskFromRgb, ThresholdExamples) {
  EXPECT_EQ(mask_from_rgb(Image(8, 8, 255)).count(), 0u);
  EXPECT_EQ(mask_from_rgb(Image(8, 8, 0)).count(), 64u);
  Image half(10, 4, 255);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 3; ++c) {
        half.at(x, y, c) = 0;
      }
    }
  }
  const BinaryMask m = mask_from_rgb(half, 0.9);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 10; ++x) {
      EXPECT_EQ(m.at(x, y), x < 5);
    }
  }
}

TEST(MaskPng, RoundTrips) {
  TempDir dir;
  const BinaryMask m = rect_mask(20, 10, 3, 2, 5, 5);
  write_mask_png(dir.str("m.png"), m);
  const BinaryMask back = read_mask_png(dir.str("m.png"));
  EXPECT_EQ(back.bits, m.bits);
}

TEST(PolygonFromMask, FilledRectangle) {
  const ForegroundPolygon p = polygon_from_mask(rect_mask(100, 100, 40, 30, 10, 10), 1);
  EXPECT_EQ(p.rings().size(), 1u);
  EXPECT_NEAR(p.area(), 100.0, 2.0);
}

TEST(PolygonFromMask, EmptyMaskThrows) {
  EXPECT_THROW(polygon_from_mask(BinaryMask(50, 50), 1), EmptyForegroundError);
}

TEST(PolygonFromMask, FullMaskCoversExtent) {
  const ForegroundPolygon p = polygon_from_mask(rect_mask(60, 40, 0, 0, 60, 40), 1);
  EXPECT_EQ(p.rings().size(), 1u);
  EXPECT_NEAR(p.area(), 60.0 * 40.0, 2.0 * (60 + 40));
  const Box b = p.bounds();
  EXPECT_NEAR(b.x0, 0.0, 1.0);
  EXPECT_NEAR(b.x1, 60.0, 1.0);
}

TEST(PolygonFromMask, ScalesToLevelZero) {
  const ForegroundPolygon p = polygon_from_mask(rect_mask(100, 100, 20, 20, 40, 40, 0.125), 1);
  EXPECT_NEAR(p.area(), 40.0 * 40.0 * 64.0, 0.02 * 40 * 40 * 64);
  EXPECT_NEAR(p.bounds().x0, 160.0, 8.0);
}

TEST(PolygonFromMask, DropsSmallRegionsAndKeepsHoles) {
  BinaryMask m = rect_mask(100, 100, 10, 10, 60, 60);
  for (int y = 30; y < 50; ++y) {
    for (int x = 30; x < 50; ++x) {
      m.set(x, y, false);
    }
  }
  m.set(90, 90, true);  // speckle
  const ForegroundPolygon p = polygon_from_mask(m, 64);
  EXPECT_EQ(p.rings().size(), 2u);
  EXPECT_NEAR(p.area(), 3600.0 - 400.0, 0.02 * 3200);
  EXPECT_FALSE(p.contains({40, 40}));
  EXPECT_TRUE(p.contains({20, 20}));
  EXPECT_FALSE(p.contains({90.5, 90.5}));
}

TEST(ForegroundPolygon, NormalizesOrientation) {
  Ring cw{{0, 0}, {0, 10}, {10, 10}, {10, 0}, {0, 0}};
  const ForegroundPolygon p({cw}, 1.0);
  EXPECT_EQ(p.rings()[0].size(), 4u);  // closing point dropped
  EXPECT_GT(signed_area(p.rings()[0]), 0.0);
  const ForegroundPolygon d = donut();
  EXPECT_GT(signed_area(d.rings()[0]), 0.0);
  EXPECT_LT(signed_area(d.rings()[1]), 0.0);
  EXPECT_DOUBLE_EQ(d.area(), 10000.0 - 2500.0);
}

TEST(ForegroundPolygon, RejectsDegenerateRings) {
  EXPECT_THROW(ForegroundPolygon({Ring{{0, 0}, {1, 1}}}, 1.0), ValidationError);
  EXPECT_THROW(ForegroundPolygon({Ring{{0, 0}, {1, 1}, {2, 2}}}, 1.0), ValidationError);
}

TEST(OverlapFraction, Examples) {
  const auto big = ForegroundPolygon::rectangle(0, 0, 1000, 1000);
  EXPECT_DOUBLE_EQ(overlap_fraction(big, {100, 100, 50, 50}), 1.0);
  EXPECT_DOUBLE_EQ(overlap_fraction(big, {2000, 100, 50, 50}), 0.0);
  const auto left = ForegroundPolygon::rectangle(0, 0, 500, 1000);
  EXPECT_NEAR(overlap_fraction(left, {450, 0, 100, 100}), 0.5, 0.02);
  EXPECT_NEAR(raster_overlap_fraction(left, {450, 0, 100, 100}), 0.5, 0.02);
}

TEST(OverlapFraction, HolesSubtract) {
  const auto d = donut();
  EXPECT_DOUBLE_EQ(overlap_fraction(d, {30, 30, 10, 10}), 0.0);
  EXPECT_NEAR(overlap_fraction(d, {0, 0, 100, 100}), 0.75, 1e-12);
  EXPECT_NEAR(raster_overlap_fraction(d, {0, 0, 100, 100}), 0.75, 0.02);
}

TEST(OverlapFraction, RectanglesMatchClosedForm) {
  CounterRng rng(21);
  for (int i = 0; i < 500; ++i) {
    const double ax = rng.uniform() * 200, ay = rng.uniform() * 200;
    const double aw = 1 + rng.uniform() * 200, ah = 1 + rng.uniform() * 200;
    const Rect r{int(rng.below(300)), int(rng.below(300)), 1 + int(rng.below(150)),
                 1 + int(rng.below(150))};
    const auto poly = ForegroundPolygon::rectangle(ax, ay, aw, ah);
    const double exact = rect_intersection(ax, ay, aw, ah, r) / (double(r.w) * r.h);
    ASSERT_NEAR(overlap_fraction(poly, r), exact, 1e-9);
    ASSERT_NEAR(raster_overlap_fraction(poly, r, 64), exact, 0.02);
  }
}

TEST(OverlapFraction, MonotoneAndTranslationEquivariant) {
  CounterRng rng(5);
  for (int i = 0; i < 200; ++i) {
    // Random star-shaped ring around (100, 100).
    Ring small, large;
    const int n = 5 + int(rng.below(8));
    for (int k = 0; k < n; ++k) {
      const double a = 2 * M_PI * k / n;
      const double r = 20 + rng.uniform() * 60;
      small.push_back({100 + r * std::cos(a), 100 + r * std::sin(a)});
      large.push_back({100 + 1.3 * r * std::cos(a), 100 + 1.3 * r * std::sin(a)});
    }
    const ForegroundPolygon ps({small}, 1.0), pl({large}, 1.0);
    const Rect rect{int(rng.below(150)), int(rng.below(150)), 10 + int(rng.below(80)),
                    10 + int(rng.below(80))};
    ASSERT_LE(overlap_fraction(ps, rect), overlap_fraction(pl, rect) + 1e-12);

    const double tx = double(rng.below(1000)), ty = double(rng.below(1000));
    Ring moved = small;
    for (auto& p : moved) {
      p.x += tx;
      p.y += ty;
    }
    const ForegroundPolygon pm({moved}, 1.0);
    const Rect rm{rect.x + int(tx), rect.y + int(ty), rect.w, rect.h};
    ASSERT_NEAR(overlap_fraction(ps, rect), overlap_fraction(pm, rm), 1e-9);
    ASSERT_NEAR(raster_overlap_fraction(ps, rect), overlap_fraction(ps, rect), 0.02);
  }
}

TEST(PolygonJson, RoundTrips) {
  TempDir dir;
  ForegroundPolygon d = donut();
  d.set_slide_id("slide-7");
  write_polygon(dir.str("p.json"), d);
  const ForegroundPolygon back = read_polygon(dir.str("p.json"));
  EXPECT_EQ(back.slide_id(), "slide-7");
  EXPECT_EQ(back.rings().size(), 2u);
  EXPECT_DOUBLE_EQ(back.area(), d.area());
}
