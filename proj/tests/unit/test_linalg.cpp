#include <doctest.h>

#include <random>

#include "erpbpnn/linalg.hpp"
#include "support/oracles.hpp"

using namespace erpbpnn;

TEST_SUITE("linalg") {
  TEST_CASE("matvec examples") {
    Vec v(2);
    v << 3, 4;
    CHECK(matvec(Mat::Identity(2, 2), v) == v);
    CHECK(matvec(Mat::Zero(2, 2), v).isZero(0.0));
    Mat m(2, 2);
    m << 1, 2, 3, 4;
    Vec ones = Vec::Ones(2);
    const Vec r = matvec(m, ones);
    CHECK(r[0] == 3.0);
    CHECK(r[1] == 7.0);
  }

  TEST_CASE("matvec rejects shape mismatch") {
    CHECK_THROWS_AS(matvec(Mat::Zero(2, 3), Vec::Zero(2)), ConfigError);
  }

  TEST_CASE("matvec is linear") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const Index r = 1 + trial % 4, c = 1 + (trial / 4) % 4;
      Mat m(r, c);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = oracle::randn(rng);
      const Vec u = oracle::random_vec(rng, c), w = oracle::random_vec(rng, c);
      const double a = oracle::randn(rng), b = oracle::randn(rng);
      const Vec lhs = matvec(m, Vec(a * u + b * w));
      const Vec rhs = a * matvec(m, u) + b * matvec(m, w);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }

  TEST_CASE("tanh_vec examples") {
    CHECK(tanh_vec(Vec::Zero(2)).isZero(0.0));
    Vec big(1);
    big << 100.0;
    CHECK(std::abs(tanh_vec(big)[0] - 1.0) <= 1e-12);
    Vec one(1);
    one << 1.0;
    const double ref = oracle::series_tanh(1.0);
    CHECK(std::abs(ref - 0.7615941559557649) <= 1e-16);
    CHECK(std::abs(tanh_vec(one)[0] - ref) <= 1e-15);
  }

  TEST_CASE("tanh_vec works for float scalars") {
    VecT<float> v(2);
    v << 0.5f, -0.5f;
    const VecT<float> r = tanh_vec(v);
    CHECK(r[0] == doctest::Approx(std::tanh(0.5f)));
    CHECK(r[1] == doctest::Approx(-std::tanh(0.5f)));
  }

  TEST_CASE("lsq_slope examples") {
    Vec xs(5), c(5), line(5), zigzag(5);
    xs << 1, 2, 3, 4, 5;
    c.setConstant(-3.25);
    line << 1, 2, 3, 4, 5;
    zigzag << 0, 1, 0, 1, 0;
    CHECK(std::abs(*lsq_slope(xs, c)) <= 1e-15);
    CHECK(std::abs(*lsq_slope(xs, line) - 1.0) <= 1e-15);
    const double ref = oracle::normal_equations_slope({1, 2, 3, 4, 5}, {0, 1, 0, 1, 0});
    CHECK(std::abs(ref) <= 1e-15);
    CHECK(std::abs(*lsq_slope(xs, zigzag) - ref) <= 1e-15);
  }

  TEST_CASE("lsq_slope signals degenerate input") {
    Vec same = Vec::Constant(4, 2.0), ys = Vec::LinSpaced(4, 0, 3);
    CHECK_FALSE(lsq_slope(same, ys).has_value());
    CHECK_FALSE(lsq_slope(Vec::Ones(1), Vec::Ones(1)).has_value());
    CHECK_FALSE(lsq_slope(Vec::LinSpaced(3, 0, 2), Vec::Ones(2)).has_value());
  }

  TEST_CASE("lsq_slope recovers exact lines and ignores shifts") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
      const Index n = 2 + trial % 8;
      const double start = std::floor(oracle::randn(rng, 50.0));
      const Vec xs = Vec::LinSpaced(n, start, start + static_cast<double>(n - 1));
      const double a = oracle::randn(rng, 3.0), b = oracle::randn(rng, 10.0);
      const Vec ys = (a * xs.array() + b).matrix();
      CHECK(std::abs(*lsq_slope(xs, ys) - a) <= 1e-10);

      const Vec noisy = oracle::random_vec(rng, n);
      const double shift = oracle::randn(rng, 5.0);
      const Vec shifted = (noisy.array() + shift).matrix();
      CHECK(std::abs(*lsq_slope(xs, shifted) - *lsq_slope(xs, noisy)) <= 1e-12);
    }
  }
}
