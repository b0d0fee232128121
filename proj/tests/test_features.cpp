#include <catch2/catch_amalgamated.hpp>

#include "degpr/features.hpp"
#include "degpr/rng.hpp"
#include "oracle_helpers.hpp"

using namespace degpr;

TEST_CASE("size feature") {
  CHECK(size_feature({0, 0, 10, 20}) == 200.0);
  CHECK(size_feature({5, 5, 5, 9}) == 0.0);
  CHECK(size_feature({0, 0, 1, 1}) == 1.0);
}

TEST_CASE("intensity feature on structured images") {
  const GrayImage uniform(32, 32, 128.0f);
  CHECK(intensity_feature(uniform, {1, 1, 30, 30}) == 128.0);

  GrayImage halves(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) halves.at(x, y) = x < 5 ? 0.0f : 255.0f;
  // box covering pixels 0..9 in x: five 0s and five 255s per row
  CHECK(intensity_feature(halves, {0, 0, 9, 9}) == 127.5);

  CHECK_THROWS_AS(intensity_feature(uniform, {3.2, 3.2, 3.9, 3.9}), std::invalid_argument);
}

TEST_CASE("intensity feature equals brute-force pixel mean on random boxes") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const GrayImage img = oracle::random_image(8, 8, rng);
    const double x0 = rng.uniform(0, 6), y0 = rng.uniform(0, 6);
    const BoundingBox box{x0, y0, x0 + rng.uniform(1, 7 - x0), y0 + rng.uniform(1, 7 - y0)};
    CHECK_THAT(intensity_feature(img, box),
               Catch::Matchers::WithinAbs(oracle::brute_force_intensity(img, box), 1e-12));
  }
}

TEST_CASE("intensity feature stays within the box pixel range") {
  Rng rng(12);
  const GrayImage img = oracle::random_image(16, 16, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const double x0 = rng.uniform(0, 10), y0 = rng.uniform(0, 10);
    const BoundingBox box{x0, y0, x0 + rng.uniform(2, 5), y0 + rng.uniform(2, 5)};
    const double v = intensity_feature(img, box);
    CHECK(v >= 0.0);
    CHECK(v <= 255.0);
  }
}

TEST_CASE("class average") {
  const std::vector<double> two{100, 200};
  CHECK(class_average(two) == 150.0);
  const std::vector<double> one{42.5};
  CHECK(class_average(one) == 42.5);
  CHECK_THROWS_AS(class_average(std::vector<double>{}), std::invalid_argument);

  Rng rng(5);
  std::vector<double> values(1000);
  for (auto& v : values) v = rng.uniform(-1e6, 1e6);
  CHECK_THAT(class_average(values),
             Catch::Matchers::WithinRel(oracle::kahan_mean(values), 1e-9));
}

TEST_CASE("discriminative diff") {
  CHECK(discriminative_diff(150, 100) == 50.0);
  CHECK(discriminative_diff(100, 150) == -discriminative_diff(150, 100));
  CHECK(discriminative_diff(7, 7) == 0.0);
}

namespace {

// Renders two-class scenes directly: class 0 darker and larger.
struct TwoClassScene {
  GrayImage img{64, 64, 200.0f};
  BoxesByClass boxes{2};

  void add(int cls, double x0, double y0, double side, float intensity) {
    for (int y = static_cast<int>(y0); y < static_cast<int>(y0 + side); ++y)
      for (int x = static_cast<int>(x0); x < static_cast<int>(x0 + side); ++x)
        img.at(x, y) = intensity;
    boxes[cls].push_back({x0, y0, x0 + side, y0 + side});
  }
};

}  // namespace

TEST_CASE("explicit vector separates size and intensity by construction") {
  TwoClassScene scene;
  scene.add(0, 4, 4, 12, 40.0f);    // class 0: large, dark
  scene.add(0, 30, 6, 10, 50.0f);
  scene.add(1, 6, 40, 5, 160.0f);   // class 1: small, light
  scene.add(1, 40, 40, 6, 150.0f);

  const auto vec = explicit_vector(scene.img, scene.boxes, 0, 1);
  REQUIRE(vec.has_value());
  CHECK((*vec)[0] < 0.0);  // class 0 darker
  CHECK((*vec)[1] > 0.0);  // class 0 bigger
}

TEST_CASE("explicit vector of identical box sets is zero") {
  TwoClassScene scene;
  scene.add(0, 10, 10, 8, 90.0f);
  scene.boxes[1] = scene.boxes[0];
  const auto vec = explicit_vector(scene.img, scene.boxes, 0, 1);
  REQUIRE(vec.has_value());
  CHECK((*vec)[0] == 0.0);
  CHECK((*vec)[1] == 0.0);
}

TEST_CASE("explicit vector missing class yields no vector") {
  TwoClassScene scene;
  scene.add(0, 10, 10, 8, 90.0f);
  CHECK_FALSE(explicit_vector(scene.img, scene.boxes, 0, 1).has_value());
}

TEST_CASE("single box per class reduces to per-box feature differences") {
  TwoClassScene scene;
  scene.add(0, 4, 4, 10, 60.0f);
  scene.add(1, 30, 30, 6, 120.0f);
  const auto vec = explicit_vector(scene.img, scene.boxes, 0, 1);
  REQUIRE(vec.has_value());
  const double di = intensity_feature(scene.img, scene.boxes[0][0]) -
                    intensity_feature(scene.img, scene.boxes[1][0]);
  const double ds = size_feature(scene.boxes[0][0]) - size_feature(scene.boxes[1][0]);
  CHECK_THAT((*vec)[0], Catch::Matchers::WithinAbs(di, 1e-12));
  CHECK_THAT((*vec)[1], Catch::Matchers::WithinAbs(ds, 1e-12));
}

TEST_CASE("translation invariance on a uniform image") {
  const GrayImage img(64, 64, 99.0f);
  BoxesByClass boxes(2);
  boxes[0] = {{5, 5, 15, 12}, {20, 8, 28, 20}};
  boxes[1] = {{6, 30, 11, 36}};
  const auto v0 = explicit_vector(img, boxes, 0, 1);
  BoxesByClass shifted(2);
  for (int c = 0; c < 2; ++c)
    for (const auto& b : boxes[c])
      shifted[c].push_back({b.w_l + 7, b.h_l + 3, b.w_r + 7, b.h_r + 3});
  const auto v1 = explicit_vector(img, shifted, 0, 1);
  REQUIRE(v0.has_value());
  REQUIRE(v1.has_value());
  CHECK_THAT((*v0)[0], Catch::Matchers::WithinAbs((*v1)[0], 1e-12));
  CHECK_THAT((*v0)[1], Catch::Matchers::WithinAbs((*v1)[1], 1e-12));
}

TEST_CASE("size gradient partials") {
  const GrayImage img(64, 64, 10.0f);
  BoxesByClass boxes(2);
  boxes[0] = {{0, 0, 10, 20}};
  boxes[1] = {{30, 30, 40, 40}};
  const auto grad = explicit_vector_grad(img, boxes, 0, 1);
  REQUIRE(grad.grads_i.size() == 1);
  // d(size)/d(w_r) of (0,0)-(10,20) is its height, with +1/|B_0| scaling
  CHECK_THAT(grad.grads_i[0][1].w_r, Catch::Matchers::WithinAbs(20.0, 1e-12));
  CHECK_THAT(grad.grads_i[0][1].w_l, Catch::Matchers::WithinAbs(-20.0, 1e-12));
  CHECK_THAT(grad.grads_i[0][1].h_r, Catch::Matchers::WithinAbs(10.0, 1e-12));
  // class k carries the opposite sign
  CHECK_THAT(grad.grads_k[0][1].w_r, Catch::Matchers::WithinAbs(-10.0, 1e-12));
}

TEST_CASE("antisymmetric gradient for a symmetric configuration") {
  const GrayImage img(64, 64, 50.0f);
  BoxesByClass boxes(2);
  boxes[0] = {{10, 10, 20, 20}};
  boxes[1] = {{10, 10, 20, 20}};
  const auto grad = explicit_vector_grad(img, boxes, 0, 1);
  for (int comp = 0; comp < 2; ++comp) {
    CHECK_THAT(grad.grads_i[0][comp].w_l,
               Catch::Matchers::WithinAbs(-grad.grads_k[0][comp].w_l, 1e-12));
    CHECK_THAT(grad.grads_i[0][comp].w_r,
               Catch::Matchers::WithinAbs(-grad.grads_k[0][comp].w_r, 1e-12));
  }
}

TEST_CASE("size-path gradient matches finite differences of explicit_vector") {
  Rng rng(31);
  const GrayImage img(64, 64, 100.0f);  // uniform: intensity gradient is zero
  for (int trial = 0; trial < 20; ++trial) {
    BoxesByClass boxes(2);
    for (int c = 0; c < 2; ++c) {
      const int n = 1 + static_cast<int>(rng.index(3));
      for (int i = 0; i < n; ++i) {
        const double x0 = rng.uniform(5, 40), y0 = rng.uniform(5, 40);
        boxes[c].push_back({x0, y0, x0 + rng.uniform(4, 15), y0 + rng.uniform(4, 15)});
      }
    }
    const auto grad = explicit_vector_grad(img, boxes, 0, 1);

    // finite differences of the size component w.r.t. every coordinate
    const auto eval_size = [&](const BoxesByClass& bs) {
      return (*explicit_vector(img, bs, 0, 1))[1];
    };
    const double step = 1e-3;
    const auto shift_coord = [](BoundingBox& b, int coord, double d) {
      switch (coord) {
        case 0: b.w_l += d; break;
        case 1: b.h_l += d; break;
        case 2: b.w_r += d; break;
        default: b.h_r += d; break;
      }
    };
    std::vector<double> analytic, numeric;
    for (int cls = 0; cls < 2; ++cls) {
      const auto& grads = (cls == 0) ? grad.grads_i : grad.grads_k;
      for (std::size_t b = 0; b < boxes[cls].size(); ++b) {
        for (int coord = 0; coord < 4; ++coord) {
          BoxesByClass plus = boxes, minus = boxes;
          shift_coord(plus[cls][b], coord, step);
          shift_coord(minus[cls][b], coord, -step);
          numeric.push_back((eval_size(plus) - eval_size(minus)) / (2 * step));
          const BoxCoordGrad& g = grads[b][1];
          analytic.push_back(coord == 0 ? g.w_l : coord == 1 ? g.h_l : coord == 2 ? g.w_r : g.h_r);
        }
      }
    }
    CHECK(oracle::max_rel_err(analytic, numeric) <= 1e-6);
  }
}
