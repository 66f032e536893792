#include <doctest.h>

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "glandscreen/patcher.hpp"
#include "synthetic.hpp"

using namespace glandscreen;
using namespace glandscreen::patcher;

namespace {

/// Centroid of the non-white pixels inside `roi`, computed by direct summation.
cv::Point2d painted_centroid(const RgbImage& img, cv::Rect roi) {
  double sx = 0, sy = 0, n = 0;
  for (int y = roi.y; y < roi.y + roi.height; ++y) {
    for (int x = roi.x; x < roi.x + roi.width; ++x) {
      if (img.at(y, x) != cv::Vec3b(255, 255, 255)) {
        sx += x;
        sy += y;
        n += 1;
      }
    }
  }
  return {sx / n, sy / n};
}

cv::Point2d bbox_center(const cv::Rect& r) { return {r.x + r.width / 2.0, r.y + r.height / 2.0}; }

long count_true(const TissueMask& m) { return cv::countNonZero(m.mask); }

}  // namespace

TEST_CASE("segment_tissue on trivial images") {
  PatchParams p;
  CHECK(count_true(segment_tissue(RgbImage(64, 64, {255, 255, 255}), p)) == 0);
  const auto full = segment_tissue(RgbImage(64, 64, {150, 40, 160}), p);
  CHECK(count_true(full) == 64 * 64);
  CHECK(full.height() == 64);
  CHECK(full.width() == 64);
}

TEST_CASE("segment_tissue marks a disk up to boundary erosion") {
  PatchParams p;
  const cv::Point c(100, 90);
  const int r = 50;
  const auto img = testing::blob_image(200, 180, {{c, {r, r}}});
  const auto mask = segment_tissue(img, p);
  const double tol = p.open_radius + 1.5;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double d = std::hypot(x - c.x, y - c.y);
      if (d < r - tol) CHECK(mask.at(y, x));
      if (d > r + tol) CHECK(!mask.at(y, x));
    }
  }
}

TEST_CASE("two disjoint blobs give two patches centred on the blobs") {
  PatchParams p;
  const auto img = testing::blob_image(1024, 1024, {{{260, 300}, {120, 90}}, {{720, 700}, {70, 120}}});
  const auto patches = patches_for_image(img, p, "two");
  REQUIRE(patches.size() == 2);
  const cv::Point2d c1 = painted_centroid(img, {0, 0, 512, 512});
  const cv::Point2d c2 = painted_centroid(img, {512, 512, 512, 512});
  // Order is by area descending: pi*120*90 > pi*70*120.
  CHECK(cv::norm(bbox_center(patches[0].source_bbox) - c1) <= 10.0);
  CHECK(cv::norm(bbox_center(patches[1].source_bbox) - c2) <= 10.0);
  CHECK(patches[0].component_area >= patches[1].component_area);
  for (const auto& patch : patches) {
    CHECK(patch.pixels.height() == 320);
    CHECK(patch.pixels.width() == 320);
    CHECK(!patch.fallback);
    CHECK(patch.source_id == "two");
    const auto& b = patch.source_bbox;
    CHECK(b.x >= 0);
    CHECK(b.y >= 0);
    CHECK(b.x + b.width <= img.width());
    CHECK(b.y + b.height <= img.height());
    CHECK(b.width == b.height);  // square crop away from the borders
  }
}

TEST_CASE("blank image yields exactly one fallback patch") {
  PatchParams p;
  const RgbImage blank(300, 500, {255, 255, 255});
  const auto patches = patches_for_image(blank, p);
  REQUIRE(patches.size() == 1);
  CHECK(patches[0].fallback);
  CHECK(patches[0].source_bbox == cv::Rect(0, 0, 500, 300));
  CHECK(patches[0].pixels == resize_bilinear(blank, 320, 320));
}

TEST_CASE("fallback appears iff no component reaches the minimum area") {
  PatchParams p;
  const auto small = testing::blob_image(400, 400, {{{200, 200}, {20, 20}}});
  auto patches = patches_for_image(small, p);
  REQUIRE(patches.size() == 1);
  CHECK(patches[0].fallback);

  const auto big = testing::blob_image(400, 400, {{{200, 200}, {60, 60}}, {{40, 40}, {10, 10}}});
  patches = patches_for_image(big, p);
  REQUIRE(patches.size() == 1);
  CHECK(!patches[0].fallback);
}

TEST_CASE("at most max_patches, largest first") {
  PatchParams p;
  p.max_patches = 3;
  std::vector<testing::Blob> blobs;
  for (int i = 0; i < 5; ++i) blobs.push_back({{120 + 200 * (i % 3), 150 + 400 * (i / 3)}, {45 + 5 * i, 45 + 5 * i}});
  const auto img = testing::blob_image(700, 800, blobs);
  const auto patches = patches_for_image(img, p);
  REQUIRE(patches.size() == 3);
  CHECK(patches[0].component_area >= patches[1].component_area);
  CHECK(patches[1].component_area >= patches[2].component_area);
  // The three largest blobs are indices 4, 3, 2.
  CHECK(cv::norm(bbox_center(patches[0].source_bbox) - cv::Point2d(320, 550)) <= 10.0);
}

TEST_CASE("equal-area components are ordered by row then column") {
  PatchParams p;
  const auto img = testing::blob_image(600, 600, {{{450, 150}, {60, 60}}, {{150, 150}, {60, 60}},
                                                  {{150, 450}, {60, 60}}});
  const auto patches = patches_for_image(img, p);
  REQUIRE(patches.size() == 3);
  CHECK(bbox_center(patches[0].source_bbox).x < 300);
  CHECK(bbox_center(patches[0].source_bbox).y < 300);
  CHECK(bbox_center(patches[1].source_bbox).x > 300);
  CHECK(bbox_center(patches[2].source_bbox).y > 300);
}

TEST_CASE("re-segmenting the masked image yields a subset") {
  PatchParams p;
  Rng rng(4);
  RgbImage img(128, 128);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const double s = 0.5 + 0.5 * std::sin(x / 9.0) * std::cos(y / 7.0);
      img.at(y, x) = s > 0.6 ? cv::Vec3b(160, 70 + rng.index(40), 170) : cv::Vec3b(250, 250, 250);
    }
  }
  const auto first = segment_tissue(img, p);
  RgbImage masked = img.clone();
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      if (!first.at(y, x)) masked.at(y, x) = {255, 255, 255};
    }
  }
  const auto second = segment_tissue(masked, p);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      if (second.at(y, x)) CHECK(first.at(y, x));
    }
  }
}

TEST_CASE("augmentation contracts") {
  Rng src(2);
  RgbImage pixels(320, 320);
  for (int y = 0; y < 320; ++y) {
    for (int x = 0; x < 320; ++x) {
      pixels.at(y, x) = cv::Vec3b(src.index(256), src.index(256), src.index(256));
    }
  }
  SUBCASE("disabled transforms leave the patch untouched") {
    Rng rng(1);
    CHECK(augment_pixels(pixels, AugmentConfig::none(), rng) == pixels);
  }
  SUBCASE("forced horizontal flip is an involution") {
    auto cfg = AugmentConfig::none();
    cfg.hflip = true;
    cfg.hflip_prob = 1.0;
    Rng a(10), b(20);
    const auto once = augment_pixels(pixels, cfg, a);
    CHECK(!(once == pixels));
    CHECK(augment_pixels(once, cfg, b) == pixels);
  }
  SUBCASE("fixed seed is byte-reproducible and keeps the size") {
    AugmentConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
      Rng a(seed), b(seed);
      const auto x = augment_pixels(pixels, cfg, a);
      const auto y = augment_pixels(pixels, cfg, b);
      CHECK(x == y);
      CHECK(x.height() == 320);
      CHECK(x.width() == 320);
    }
  }
  SUBCASE("patch metadata survives augmentation") {
    Patch patch{pixels, {1, 2, 30, 30}, "id", 900, false};
    Rng rng(3);
    const auto out = augment(patch, AugmentConfig{}, rng);
    CHECK(out.source_bbox == patch.source_bbox);
    CHECK(out.source_id == "id");
  }
  SUBCASE("invalid probabilities are rejected") {
    AugmentConfig cfg;
    cfg.hflip_prob = 1.5;
    CHECK_THROWS(cfg.validate());
  }
}

TEST_CASE("patch parameters are validated") {
  PatchParams p;
  p.max_patches = 0;
  CHECK_THROWS(p.validate());
  p = PatchParams{};
  p.saturation_threshold = 1.5;
  CHECK_THROWS(p.validate());
}
