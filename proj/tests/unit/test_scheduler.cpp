#include <doctest.h>

#include <random>
#include <sstream>

#include "erpbpnn/scheduler.hpp"
#include "support/oracles.hpp"

using namespace erpbpnn::sched;

namespace {

Scheduler with_history(const std::vector<std::vector<double>>& returns, std::size_t w, long k0 = 1) {
  Scheduler s(returns.size(), w, static_cast<long>(w) + 1);
  for (std::size_t t = 0; t < returns.size(); ++t)
    for (std::size_t i = 0; i < returns[t].size(); ++i) s.record_return(t, k0 + static_cast<long>(i), returns[t][i]);
  return s;
}

}  // namespace

TEST_SUITE("scheduler") {
  TEST_CASE("constructor validation") {
    CHECK_THROWS_AS(Scheduler(0), std::invalid_argument);
    CHECK_THROWS_AS(Scheduler(3, 1), std::invalid_argument);
    CHECK_THROWS_AS(Scheduler(3, 5, 5), std::invalid_argument);
    CHECK_NOTHROW(Scheduler(3, 5, 20));
  }

  TEST_CASE("record and query") {
    Scheduler s(2, 2, 3);
    s.record_return(1, 4, -3.5);
    CHECK(*s.history(1).at(4) == -3.5);
    CHECK_FALSE(s.history(1).at(3).has_value());
    CHECK_THROWS_AS(s.record_return(1, 4, 0.0), std::logic_error);
    CHECK_THROWS(s.record_return(2, 1, 0.0));
  }

  TEST_CASE("erp examples") {
    auto s = with_history({{-2, -2, -2, -2, -2}, {1, 1.5, 2, 2.5, 3}, {-9.0, -8.5, -8.6, -7.9, -7.5}}, 5);
    CHECK(std::abs(s.erp(0, 5)) <= 1e-15);
    CHECK(std::abs(s.erp(1, 5) - 0.5) <= 1e-14);
    const double ref = oracle::normal_equations_slope({1, 2, 3, 4, 5}, {-9.0, -8.5, -8.6, -7.9, -7.5});
    CHECK(std::abs(s.erp(2, 5) - ref) <= 1e-10);
    CHECK(std::abs(ref - 0.36) <= 1e-12);
  }

  TEST_CASE("erp needs a full window") {
    auto s = with_history({{1, 2, 3}}, 5);
    CHECK_THROWS_AS(s.erp(0, 3), NotBootstrapped);
  }

  TEST_CASE("erp uses the most recent window") {
    auto s = with_history({{100, -50, 1, 2, 3, 4, 5}}, 5);
    CHECK(std::abs(s.erp(0, 7) - 1.0) <= 1e-14);
  }

  TEST_CASE("erp matches the normal-equations oracle on random histories") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 1000; ++trial) {
      const long k0 = static_cast<long>(rng() % 500);
      std::vector<double> ys(5);
      for (double& y : ys) y = oracle::randn(rng, 20.0) - 40.0;
      auto s = with_history({ys}, 5, k0);
      const long k = k0 + 4;
      std::vector<double> xs;
      for (long x = k - 4; x <= k; ++x) xs.push_back(static_cast<double>(x));
      CHECK(std::abs(s.erp(0, k) - oracle::normal_equations_slope(xs, ys)) <= 1e-10);
      // Raw iteration indices or [0..w-1] give the same slope.
      CHECK(std::abs(s.erp(0, k) - oracle::normal_equations_slope({0, 1, 2, 3, 4}, ys)) <= 1e-10);
    }
  }

  TEST_CASE("select_task examples") {
    std::vector<std::vector<double>> h{{0, 0.1, 0.2, 0.3, 0.4}, {0, 0.5, 1.0, 1.5, 2.0}, {0, 0.2, 0.4, 0.6, 0.8}};
    auto s = with_history(h, 5);
    CHECK(s.select_task(5) == 1);
    CHECK(s.selections().size() == 1);
    CHECK(s.selections()[0].iteration == 5);
    CHECK(s.latest_erp().size() == 3);

    auto flat = with_history({{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}}, 5);
    CHECK(flat.select_task(5) == 0);
  }

  TEST_CASE("argmax_lowest tie rule") {
    CHECK(argmax_lowest({0.1, 0.5, 0.2}) == 1);
    CHECK(argmax_lowest({0.3, 0.3, 0.3}) == 0);
    CHECK(argmax_lowest({-1, 2, 2}) == 1);
  }

  TEST_CASE("selection is invariant under a common return offset") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<std::vector<double>> h(3, std::vector<double>(5));
      for (auto& row : h)
        for (double& v : row) v = oracle::randn(rng, 5.0);
      const double c = oracle::randn(rng, 100.0);
      auto shifted = h;
      for (auto& row : shifted)
        for (double& v : row) v += c;
      auto a = with_history(h, 5), b = with_history(shifted, 5);
      const auto ea = a.erp_all(5), eb = b.erp_all(5);
      // Skip near ties, where rounding of the offset could flip the order.
      std::vector<double> sorted = ea;
      std::sort(sorted.begin(), sorted.end());
      if (sorted[2] - sorted[1] < 1e-9) continue;
      CHECK(a.select_task(5) == b.select_task(5));
    }
  }

  TEST_CASE("jumpstart then selection never lacks history") {
    Scheduler s(3, 5, 20);
    std::mt19937_64 rng(1);
    long k = 0;
    for (std::size_t t = 0; t < 3; ++t)
      for (int i = 0; i < 20; ++i) s.record_return(t, ++k, oracle::randn(rng));
    for (int it = 0; it < 50; ++it) {
      ++k;
      std::size_t chosen = 0;
      CHECK_NOTHROW(chosen = s.select_task(k));
      for (std::size_t t = 0; t < 3; ++t) s.record_return(t, k, oracle::randn(rng) + (t == chosen));
    }
    CHECK(s.selections().size() == 50);
  }

  TEST_CASE("softmax selection") {
    auto s = with_history({{0, 0, 0, 0, 0}, {0, 1, 2, 3, 4}, {0, 0, 0, 0, 0}}, 5);
    std::mt19937_64 rng(1);
    int picked_one = 0;
    for (int i = 0; i < 200; ++i) picked_one += s.select_task_softmax(5, 0.05, rng) == 1;
    CHECK(picked_one == 200);
    auto u = with_history({{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}}, 5);
    int zeros = 0;
    for (int i = 0; i < 2000; ++i) zeros += u.select_task_softmax(5, 1.0, rng) == 0;
    CHECK(std::abs(zeros / 2000.0 - 0.5) < 0.05);
    CHECK_THROWS(u.select_task_softmax(5, 0.0, rng));
  }

  TEST_CASE("selection frequency") {
    std::vector<Selection> single, alt;
    for (long k = 1; k <= 40; ++k) {
      single.push_back({k, 2});
      alt.push_back({k, static_cast<std::size_t>(k % 2)});
    }
    const auto rows = selection_frequency(single, 3, 35);
    CHECK(rows.size() == 6);
    CHECK(rows.front().iteration == 35);
    for (const auto& r : rows) {
      CHECK(r.fractions[2] == 1.0);
      CHECK(r.fractions[0] == 0.0);
    }
    for (const auto& r : selection_frequency(alt, 2, 10)) {
      CHECK(r.fractions[0] == 0.5);
      CHECK(r.fractions[1] == 0.5);
    }
    std::mt19937_64 rng(3);
    std::vector<Selection> random;
    for (long k = 1; k <= 500; ++k) random.push_back({k, static_cast<std::size_t>(rng() % 3)});
    for (const auto& r : selection_frequency(random, 3, 35))
      CHECK(std::abs(r.fractions[0] + r.fractions[1] + r.fractions[2] - 1.0) <= 1e-12);
    CHECK(selection_frequency(random, 3, 501).empty());

    std::ostringstream out;
    write_frequency_csv(out, selection_frequency(alt, 2, 10), 2);
    CHECK(out.str().rfind("iteration,freq_task0,freq_task1\n10,0.5,0.5\n", 0) == 0);
  }
}
