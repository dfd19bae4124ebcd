#include <doctest.h>

#include <cmath>
#include <random>

#include "erpbpnn/metrics.hpp"
#include "support/oracles.hpp"

using namespace erpbpnn;
using namespace erpbpnn::metrics;
using env::Vec2;

namespace {

Trajectory constant_episode(double r, int steps, Vec2 end, Vec2 goal) {
  Trajectory t;
  t.rewards.assign(static_cast<std::size_t>(steps), r);
  t.fingertip_path = {Vec2::Zero(), end};
  t.goal = goal;
  return t;
}

EvalRecord rec(std::size_t task, double ret, double dist = 0.1, double dev = 0.0) {
  EvalRecord r;
  r.task = task;
  r.mean_return = ret;
  r.mean_discounted_return = ret;
  r.mean_distance = dist;
  r.mean_deviation = dev;
  return r;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("episodic return") {
    const std::vector<Trajectory> zero{constant_episode(0.0, 50, Vec2::Zero(), Vec2::Zero())};
    CHECK(episodic_return(zero) == 0.0);
    const std::vector<Trajectory> one{constant_episode(-0.1, 50, Vec2::Zero(), Vec2::Zero())};
    CHECK(std::abs(episodic_return(one) + 5.0) <= 1e-12);
    const std::vector<Trajectory> two{constant_episode(-4.0, 1, Vec2::Zero(), Vec2::Zero()),
                                      constant_episode(-6.0, 1, Vec2::Zero(), Vec2::Zero())};
    CHECK(episodic_return(two) == -5.0);
    CHECK(std::abs(discounted_return(one, 0.5) - (-0.1 * (1 - std::pow(0.5, 50)) / 0.5)) <= 1e-12);
  }

  TEST_CASE("distance to goal") {
    const std::vector<Trajectory> on{constant_episode(0, 1, Vec2(0.3, 0.1), Vec2(0.3, 0.1))};
    CHECK(distance_to_goal(on) == 0.0);
    const std::vector<Trajectory> two{constant_episode(0, 1, Vec2(0.1, 0), Vec2::Zero()),
                                      constant_episode(0, 1, Vec2(0, 0.3), Vec2::Zero())};
    CHECK(std::abs(distance_to_goal(two) - 0.2) <= 1e-15);
  }

  TEST_CASE("path deviation examples") {
    const std::vector<Vec2> corner{{0, 0}, {0, 1}, {1, 1}};
    CHECK(std::abs(path_deviation(corner, Vec2(1, 1)) - (2.0 - std::sqrt(2.0))) <= 1e-10);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const Vec2 a(oracle::randn(rng), oracle::randn(rng)), g(oracle::randn(rng), oracle::randn(rng));
      // Monotone but uneven progress along the segment.
      std::vector<double> ts{0.0};
      for (int i = 0; i < 20; ++i) ts.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
      std::sort(ts.begin(), ts.end());
      ts.push_back(1.0);
      std::vector<Vec2> path;
      for (double t : ts) path.push_back(a + t * (g - a));
      CHECK(std::abs(path_deviation(path, g)) <= 1e-10);

      std::vector<Vec2> wander{a};
      for (int i = 0; i < 10; ++i) wander.push_back(Vec2(oracle::randn(rng), oracle::randn(rng)));
      wander.push_back(g);
      CHECK(path_deviation(wander, g) >= -1e-12);
      CHECK(std::abs(path_deviation(wander, g) - oracle::polyline_deviation(wander, g)) <= 1e-12);
    }

    const std::vector<Vec2> still{{0.1, 0.2}, {0.1, 0.2}, {0.1, 0.2}};
    CHECK(std::abs(path_deviation(still, Vec2(0.4, 0.6)) + 0.5) <= 1e-12);
  }

  TEST_CASE("best policy store") {
    BestPolicyStore store(2);
    int made = 0;
    auto ck = [&] { return nlohmann::json{{"n", ++made}}; };
    CHECK(std::isnan(store.mean_best_return()));
    CHECK(store.update(rec(0, -10.0, 0.2, 0.05), ck));
    CHECK(store.entry(0).checkpoint.at("n") == 1);

    SUBCASE("worse record keeps the checkpoint") {
      CHECK_FALSE(store.update(rec(0, -12.0, 0.3, 0.06), ck));
      CHECK(store.entry(0).best_return == -10.0);
      CHECK(store.entry(0).best_distance == 0.2);
      CHECK(made == 1);
    }
    SUBCASE("equal return keeps the checkpoint") {
      CHECK_FALSE(store.would_improve(rec(0, -10.0)));
      CHECK_FALSE(store.update(rec(0, -10.0), ck));
      CHECK(made == 1);
    }
    SUBCASE("strictly better return replaces it") {
      CHECK(store.update(rec(0, -9.5, 0.25), ck));
      CHECK(store.entry(0).checkpoint.at("n") == 2);
      CHECK(store.entry(0).best_distance == 0.2);
      CHECK(store.entry(0).best_return_record->mean_return == -9.5);
    }
    SUBCASE("distance and deviation have their own minima") {
      store.update(rec(0, -11.0, 0.05, -0.1), ck);
      CHECK(store.entry(0).best_distance == 0.05);
      CHECK(store.entry(0).best_deviation == -0.1);
      CHECK(store.entry(0).best_return == -10.0);
    }
    SUBCASE("task means wait for every task") {
      CHECK(std::isnan(store.mean_best_distance()));
      store.update(rec(1, -20.0, 0.4, 0.15), ck);
      CHECK(store.mean_best_return() == -15.0);
      CHECK(std::abs(store.mean_best_distance() - 0.3) <= 1e-15);
      CHECK(std::abs(store.mean_best_deviation() - 0.1) <= 1e-15);
    }
  }

  TEST_CASE("best-so-far series are monotone") {
    BestPolicyStore store(1);
    std::mt19937_64 rng(2);
    double last_ret = -INFINITY, last_dist = INFINITY;
    for (int i = 0; i < 500; ++i) {
      store.update(rec(0, oracle::randn(rng, 10.0), std::abs(oracle::randn(rng))), [] { return nlohmann::json{}; });
      CHECK(store.entry(0).best_return >= last_ret);
      CHECK(store.entry(0).best_distance <= last_dist);
      last_ret = store.entry(0).best_return;
      last_dist = store.entry(0).best_distance;
    }
  }
}
