#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "stylealign/geometry.hpp"
#include "stylealign/rng.hpp"

using namespace stylealign;

namespace {

LandmarkSet random_set(int n, Rng& rng, double lo = 0, double hi = 100) {
  std::vector<Point> p(n);
  for (auto& q : p) q = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return LandmarkSet(Scheme::for_count(n), p);
}

}  // namespace

TEST(Scheme, NamesRoundTrip) {
  for (Scheme s : {Scheme::p68(), Scheme::p98(), Scheme::p29(), Scheme::p19(), Scheme::synth(10)})
    EXPECT_EQ(Scheme::parse(s.name()), s);
  EXPECT_EQ(Scheme::synth(10).name(), "SYNTH(10)");
  EXPECT_THROW(Scheme::parse("P70"), InvalidInput);
  EXPECT_THROW(Scheme::parse("SYNTH(0)"), InvalidInput);
}

TEST(LandmarkSet, RejectsWrongCountAndNonFinite) {
  EXPECT_THROW(LandmarkSet(Scheme::p68(), std::vector<Point>(67)), InvalidInput);
  std::vector<Point> p(68);
  p[3].y = std::nan("");
  EXPECT_THROW(LandmarkSet(Scheme::p68(), p), InvalidInput);
  EXPECT_NO_THROW(LandmarkSet(Scheme::p68(), std::vector<Point>(68)));
}

TEST(BoundingBox, RejectsDegenerate) {
  EXPECT_THROW(BoundingBox(10, 0, 10, 5), InvalidInput);
  EXPECT_THROW(BoundingBox(0, 6, 5, 5), InvalidInput);
}

TEST(Affine, MatchesHandAppliedMatrix) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const double a = rng.uniform(-3, 3), s = rng.uniform(0.5, 2);
    const Point c{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const auto t = AffineTransform::rotation_about(c, a, s);
    const Point p{rng.uniform(-50, 50), rng.uniform(-50, 50)};
    const double dx = p.x - c.x, dy = p.y - c.y;
    const Point expect{c.x + s * (std::cos(a) * dx - std::sin(a) * dy), c.y + s * (std::sin(a) * dx + std::cos(a) * dy)};
    const Point got = t.apply(p);
    EXPECT_NEAR(got.x, expect.x, 1e-9);
    EXPECT_NEAR(got.y, expect.y, 1e-9);
  }
}

TEST(Affine, InverseAndCompositionRoundTrip) {
  Rng rng(4);
  const auto lm = random_set(68, rng);
  const auto t = AffineTransform::rotation_about({40, 60}, 0.3, 1.2).after(AffineTransform::translation(3, -2));
  const auto back = apply_transform(apply_transform(lm, t), t.inverse());
  for (std::size_t i = 0; i < lm.size(); ++i) {
    EXPECT_NEAR(back[i].x, lm[i].x, 1e-9);
    EXPECT_NEAR(back[i].y, lm[i].y, 1e-9);
  }
  EXPECT_THROW(AffineTransform({1, 2, 0, 2, 4, 0}), InvalidInput);
}

TEST(Crop, MapsBoxToFrame) {
  Image im({3, 80, 120}, 0.5f);
  std::vector<Point> p(68, Point{0, 0});
  p[0] = {20, 10};
  p[1] = {70, 60};
  const LandmarkSet lm(Scheme::p68(), p);
  const auto r = crop_and_resize(im, BoundingBox(20, 10, 70, 60), lm, 256);
  EXPECT_EQ(r.image.shape(), (Shape{3, 256, 256}));
  EXPECT_DOUBLE_EQ(r.landmarks[0].x, 0.0);
  EXPECT_DOUBLE_EQ(r.landmarks[0].y, 0.0);
  EXPECT_DOUBLE_EQ(r.landmarks[1].x, 256.0);
  EXPECT_DOUBLE_EQ(r.landmarks[1].y, 256.0);
}

TEST(Crop, IdentityWhenBoxIsWholeFrame) {
  Rng rng(5);
  Image im({3, 64, 64});
  for (std::size_t i = 0; i < im.size(); ++i) im[i] = static_cast<float>(rng.uniform());
  const auto lm = random_set(10, rng, 0, 63);
  const auto r = crop_and_resize(im, BoundingBox(0, 0, 64, 64), lm, 64);
  EXPECT_EQ(r.image, im);
  EXPECT_EQ(r.landmarks, lm);
}

TEST(Crop, Errors) {
  Image im({3, 50, 50});
  const LandmarkSet lm(Scheme::synth(2), {{1, 1}, {2, 2}});
  EXPECT_THROW(crop_and_resize(im, BoundingBox(60, 60, 80, 80), lm, 32), InvalidInput);
  EXPECT_THROW(crop_and_resize(im, BoundingBox(0, 0, 10, 10), lm, 0), InvalidInput);
}

TEST(Heatmaps, ClosedFormGaussian) {
  const LandmarkSet lm(Scheme::synth(2), {{10.3, 7.6}, {-5, 3}});
  const double sigma = 1.5;
  const auto hm = render_heatmaps(lm, 20, 24, sigma);
  EXPECT_EQ(hm.maps.shape(), (Shape{2, 20, 24}));
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 24; ++x) {
      const double d2 = (x - 10.3) * (x - 10.3) + (y - 7.6) * (y - 7.6);
      const float expect = (x == 10 && y == 8) ? 1.0f : static_cast<float>(std::exp(-d2 / (2 * sigma * sigma)));
      EXPECT_FLOAT_EQ(hm.maps.at(0, y, x), expect);
      EXPECT_EQ(hm.maps.at(1, y, x), 0.0f);  // off-image landmark
    }
}

TEST(Heatmaps, PeakAtNearestPixel) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const LandmarkSet lm(Scheme::synth(1), {{rng.uniform(0, 31), rng.uniform(0, 31)}});
    const auto hm = render_heatmaps(lm, 32, 32);
    float best = -1;
    int bx = -1, by = -1;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (hm.maps.at(0, y, x) > best) best = hm.maps.at(0, y, x), bx = x, by = y;
    EXPECT_EQ(bx, std::lround(lm[0].x));
    EXPECT_EQ(by, std::lround(lm[0].y));
    EXPECT_EQ(best, 1.0f);
  }
}

TEST(Heatmaps, RejectsBadSigma) {
  const LandmarkSet lm(Scheme::synth(1), {{1, 1}});
  EXPECT_THROW(render_heatmaps(lm, 8, 8, 0.0), InvalidInput);
}

TEST(Flip, PermutationsAreInvolutions) {
  for (Scheme s : {Scheme::p68(), Scheme::p98(), Scheme::synth(10)}) {
    const auto perm = flip_permutation(s);
    ASSERT_TRUE(perm.has_value()) << s.name();
    ASSERT_EQ(static_cast<int>(perm->size()), s.count);
    for (int i = 0; i < s.count; ++i) EXPECT_EQ((*perm)[(*perm)[i]], i) << s.name() << " index " << i;
  }
  EXPECT_FALSE(flip_permutation(Scheme::p29()).has_value());
}

TEST(Flip, P68EyeCornersSwap) {
  const auto perm = *flip_permutation(Scheme::p68());
  EXPECT_EQ(perm[36], 45);
  EXPECT_EQ(perm[39], 42);
  EXPECT_EQ(perm[48], 54);
  EXPECT_EQ(perm[8], 8);
  EXPECT_EQ(perm[30], 30);
}
