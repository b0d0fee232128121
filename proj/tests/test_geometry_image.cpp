#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"
#include "degpr/rng.hpp"
#include "oracle_helpers.hpp"

using namespace degpr;

TEST_CASE("iou basics") {
  const BoundingBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);

  const BoundingBox far_away{10, 10, 12, 12};
  CHECK(iou(a, far_away) == 0.0);

  // areas 4 + 4 - 1 = 7
  const BoundingBox b{1, 1, 3, 3};
  CHECK_THAT(iou(a, b), Catch::Matchers::WithinAbs(1.0 / 7.0, 1e-12));

  const BoundingBox degenerate{5, 5, 5, 5};
  CHECK(iou(degenerate, degenerate) == 0.0);  // zero union
}

TEST_CASE("iou symmetry and bounds on random boxes") {
  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    const auto rand_box = [&] {
      const double x0 = rng.uniform(0, 50), y0 = rng.uniform(0, 50);
      return BoundingBox{x0, y0, x0 + rng.uniform(0, 30), y0 + rng.uniform(0, 30)};
    };
    const BoundingBox a = rand_box(), b = rand_box();
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    if (a.area() > 0) CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("box validation") {
  CHECK(box_valid({0, 0, 1, 1}));
  CHECK(box_valid({2, 2, 2, 2}));
  CHECK_FALSE(box_valid({1, 0, 0, 1}));
  CHECK_FALSE(box_valid({0, 0, std::numeric_limits<double>::quiet_NaN(), 1}));
  CHECK_THROWS_AS(require_valid_box({3, 0, 1, 1}), std::invalid_argument);
}

TEST_CASE("crop_patch on constant image is constant") {
  const GrayImage img(100, 80, 77.0f);
  const GrayImage patch = crop_patch(img, {3.7, 10.2, 55.1, 60.9}, 224);
  REQUIRE(patch.width == 224);
  REQUIRE(patch.height == 224);
  for (float v : patch.pixels) CHECK(v == 77.0f);
}

TEST_CASE("crop of exactly out_size is identity") {
  Rng rng(7);
  GrayImage img = oracle::random_image(224, 224, rng);
  const GrayImage patch = crop_patch(img, {0, 0, 224, 224}, 224);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    CHECK_THAT(patch.pixels[i], Catch::Matchers::WithinAbs(img.pixels[i], 1e-4));
}

TEST_CASE("bilinear upscale of 2x2 checkerboard matches source corners") {
  GrayImage src(2, 2);
  src.at(0, 0) = 0;
  src.at(1, 0) = 255;
  src.at(0, 1) = 255;
  src.at(1, 1) = 0;
  const GrayImage up = resize_bilinear(src, 224, 224);
  CHECK(up.at(0, 0) == src.at(0, 0));
  CHECK(up.at(223, 0) == src.at(1, 0));
  CHECK(up.at(0, 223) == src.at(0, 1));
  CHECK(up.at(223, 223) == src.at(1, 1));
}

TEST_CASE("crop_patch rejects degenerate boxes") {
  const GrayImage img(10, 10, 1.0f);
  CHECK_THROWS_AS(crop_patch(img, {20, 20, 30, 30}, 8), std::invalid_argument);
  CHECK_THROWS_AS(crop_patch(img, {5, 5, 5, 9}, 8), std::invalid_argument);
}

TEST_CASE("pgm round trip") {
  Rng rng(123);
  GrayImage img = oracle::random_image(33, 17, rng);
  for (auto& p : img.pixels) p = std::round(p);  // writer quantizes to 8 bits
  const auto path = std::filesystem::temp_directory_path() / "degpr_test_roundtrip.pgm";
  write_pgm(img, path.string());
  const GrayImage back = read_pgm(path.string());
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
  std::filesystem::remove(path);
}

TEST_CASE("ppm converts to luma") {
  const auto path = std::filesystem::temp_directory_path() / "degpr_test_color.ppm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n2 1\n255\n";
    const unsigned char rgb[6] = {255, 0, 0, 0, 255, 0};
    out.write(reinterpret_cast<const char*>(rgb), 6);
  }
  const GrayImage img = read_pgm(path.string());
  REQUIRE(img.width == 2);
  CHECK_THAT(img.at(0, 0), Catch::Matchers::WithinAbs(0.299 * 255, 0.01));
  CHECK_THAT(img.at(1, 0), Catch::Matchers::WithinAbs(0.587 * 255, 0.01));
  std::filesystem::remove(path);
}

TEST_CASE("mask fill") {
  ImageRecord rec;
  rec.image = GrayImage(4, 4, 10.0f);
  GrayImage mask(4, 4, 0.0f);
  mask.at(1, 1) = 255.0f;
  rec.mask = mask;
  apply_mask(rec, 200.0f);
  CHECK(rec.image.at(1, 1) == 10.0f);
  CHECK(rec.image.at(0, 0) == 200.0f);
}
