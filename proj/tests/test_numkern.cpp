#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mixer/numkern.hpp"
#include "mixer/rng.hpp"

using namespace mixer;

TEST_CASE("affine matches hand-computed products") {
  Mat id(2, 2);
  id(0, 0) = 1.0;
  id(1, 1) = 1.0;
  REQUIRE(affine(id, {1.0, 2.0}) == Vec{1.0, 2.0});

  Mat zero(3, 2);
  REQUIRE(affine(zero, {4.0, -7.0}) == Vec{0.0, 0.0, 0.0});

  // [[1,2],[3,4]] * [1,1] = [3,7]
  Mat m(2, 2);
  m(0, 0) = 1.0;
  m(0, 1) = 2.0;
  m(1, 0) = 3.0;
  m(1, 1) = 4.0;
  REQUIRE(affine(m, {1.0, 1.0}) == Vec{3.0, 7.0});

  Vec bias{10.0, 20.0};
  REQUIRE(affine(m, {1.0, 1.0}, &bias) == Vec{13.0, 27.0});

  REQUIRE_THROWS_AS(affine(m, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("affine is linear") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Mat m(3, 4);
    for (double& v : m.a) v = rng.uniform(-1.0, 1.0);
    Vec x(4), y(4);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (double& v : y) v = rng.uniform(-1.0, 1.0);
    const double a = rng.uniform(-2.0, 2.0);
    const double b = rng.uniform(-2.0, 2.0);
    Vec combo(4);
    for (int i = 0; i < 4; ++i) combo[i] = a * x[i] + b * y[i];
    const Vec lhs = affine(m, combo);
    const Vec fx = affine(m, x);
    const Vec fy = affine(m, y);
    for (int i = 0; i < 3; ++i) REQUIRE(lhs[i] == Catch::Approx(a * fx[i] + b * fy[i]).margin(1e-10));
  }
}

TEST_CASE("softmax hand values and invariances") {
  const Vec p0 = softmax({0.0, 0.0});
  REQUIRE(p0[0] == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(p0[1] == Catch::Approx(0.5).margin(1e-15));

  const Vec pc = softmax({3.7, 3.7, 3.7, 3.7});
  for (double v : pc) REQUIRE(v == Catch::Approx(0.25).margin(1e-15));

  // e^{ln 1} : e^{ln 3} = 1 : 3
  const Vec pl = softmax({std::log(1.0), std::log(3.0)});
  REQUIRE(pl[0] == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(pl[1] == Catch::Approx(0.75).margin(1e-12));

  REQUIRE_THROWS_AS(softmax(Vec{}), ShapeError);

  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    Vec x(5);
    for (double& v : x) v = rng.uniform(-30.0, 30.0);
    const Vec p = softmax(x);
    double sum = 0.0;
    for (double v : p) {
      REQUIRE(v > 0.0);
      sum += v;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    const double shift = rng.uniform(-50.0, 50.0);
    Vec xs = x;
    for (double& v : xs) v += shift;
    const Vec ps = softmax(xs);
    for (int i = 0; i < 5; ++i) REQUIRE(ps[i] == Catch::Approx(p[i]).margin(1e-12));
  }
}

TEST_CASE("sigmoid and tanh hand values") {
  REQUIRE(sigmoid_vec({0.0})[0] == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(tanh_vec({0.0})[0] == 0.0);
  // 1/(1+e^{-ln 3}) = 3/4
  REQUIRE(sigmoid_vec({std::log(3.0)})[0] == Catch::Approx(0.75).margin(1e-12));
  const Vec s = sigmoid_vec({-10.0, 10.0});
  REQUIRE(s[0] > 0.0);
  REQUIRE(s[1] < 1.0);
}

TEST_CASE("sgd_step rescales by the global norm") {
  // grads [12, 16] have global norm 20; cap 10 halves them
  Mat p(1, 2);
  p(0, 0) = 1.0;
  p(0, 1) = 2.0;
  Mat g(1, 2);
  g(0, 0) = 12.0;
  g(0, 1) = 16.0;
  sgd_step({&p}, {&g}, 0.1, 10.0);
  REQUIRE(p(0, 0) == Catch::Approx(1.0 - 0.1 * 6.0).margin(1e-15));
  REQUIRE(p(0, 1) == Catch::Approx(2.0 - 0.1 * 8.0).margin(1e-15));
}

TEST_CASE("sgd_step below the cap is unscaled") {
  Mat p(1, 2);
  p(0, 0) = 1.0;
  p(0, 1) = 1.0;
  Mat g(1, 2);
  g(0, 0) = 3.0;
  g(0, 1) = 4.0;  // norm 5
  sgd_step({&p}, {&g}, 0.01, 10.0);
  REQUIRE(p(0, 0) == Catch::Approx(1.0 - 0.03).margin(1e-15));
  REQUIRE(p(0, 1) == Catch::Approx(1.0 - 0.04).margin(1e-15));
}

TEST_CASE("sgd_step hand arithmetic: 1.0 - 0.1*2.0 = 0.8") {
  Mat p(1, 1);
  p(0, 0) = 1.0;
  Mat g(1, 1);
  g(0, 0) = 2.0;
  sgd_step({&p}, {&g}, 0.1, 10.0);
  REQUIRE(p(0, 0) == Catch::Approx(0.8).margin(1e-15));
}

TEST_CASE("post-rescale gradient norm never exceeds the cap") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    Mat g1(2, 3), g2(4, 1);
    for (double& v : g1.a) v = rng.uniform(-9.0, 9.0);
    for (double& v : g2.a) v = rng.uniform(-9.0, 9.0);
    const double cap = rng.uniform(0.5, 12.0);
    const double norm = global_norm({&g1, &g2});
    const double scale = norm > cap ? cap / norm : 1.0;
    Mat s1 = g1, s2 = g2;
    for (double& v : s1.a) v *= scale;
    for (double& v : s2.a) v *= scale;
    REQUIRE(global_norm({&s1, &s2}) <= cap + 1e-9);
  }
}

TEST_CASE("non-finite gradients abort with a diagnostic") {
  Mat p(1, 1);
  Mat g(1, 1);
  g(0, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(sgd_step({&p}, {&g}, 0.1, 10.0), NumericError);
}
