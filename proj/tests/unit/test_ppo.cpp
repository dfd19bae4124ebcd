#include <doctest.h>

#include <numbers>
#include <random>

#include "erpbpnn/ppo.hpp"
#include "support/oracles.hpp"

using namespace erpbpnn;
using namespace erpbpnn::ppo;

namespace {

struct Fixture {
  ActorCritic ac;
  std::vector<env::ReacherEnv> envs;
  std::vector<std::mt19937_64> rngs;

  explicit Fixture(std::size_t task = 1, int num_envs = 8, Index hidden = 4) {
    const std::vector<Index> heads{2, 3, 4};
    ac.actor = BpnnNet::make(env::kObsDim, heads, 3, hidden);
    ac.critic = BpnnNet::make(env::kObsDim, {1, 1, 1}, 3, hidden);
    InitScales as;
    as.output_gain = 0.01;
    init_params(ac.actor, 1, as);
    init_params(ac.critic, 2);
    for (Index h : heads) ac.log_std.push_back(Vec::Zero(h));
    for (int e = 0; e < num_envs; ++e) {
      envs.emplace_back(env::make_arm(static_cast<int>(task) + 2), 1000 + e);
      rngs.emplace_back(2000 + e);
    }
  }

  void activate(std::size_t task) {
    freeze_all(ac.actor);
    freeze_all(ac.critic);
    set_frozen(ac.actor, task, false);
    set_frozen(ac.critic, task, false);
  }
};

}  // namespace

TEST_SUITE("ppo") {
  TEST_CASE("gaussian log-prob and entropy") {
    Vec mean(2), ls(2), a(2);
    mean << 0.3, -1.0;
    ls << -0.5, 0.2;
    a << 0.1, 0.4;
    double ref = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double sd = std::exp(ls[k]);
      ref += std::log(std::exp(-0.5 * std::pow((a[k] - mean[k]) / sd, 2)) / (sd * std::sqrt(2 * std::numbers::pi)));
    }
    CHECK(std::abs(GaussianHead::log_prob(mean, ls, a) - ref) <= 1e-14);
    const double ent = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e) * 2 + ls.sum();
    CHECK(std::abs(GaussianHead::entropy(ls) - ent) <= 1e-14);
  }

  TEST_CASE("log-std is clamped") {
    Fixture f;
    f.ac.log_std[0] << 5.0, -30.0;
    const Vec c = f.ac.clamped_log_std(0);
    CHECK(c[0] == 2.0);
    CHECK(c[1] == -20.0);
  }

  TEST_CASE("rollout shape and self-consistency") {
    Fixture f;
    RewardNormalizer norm(8, 0.99);
    RolloutOptions opt;
    const auto buf = collect_rollout(1, f.ac, f.envs, f.rngs, &norm, opt);
    CHECK(buf.size() == 800);
    CHECK(buf.episodes.size() == 16);
    CHECK(buf.actor_traces.size() == 800);
    const Vec ls = f.ac.clamped_log_std(1);
    int dones = 0;
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const auto& tr = buf.transitions[i];
      const Vec mean = f.ac.mean_action(tr.obs, 1);
      CHECK(std::abs(GaussianHead::log_prob(mean, ls, tr.action) - tr.log_prob) <= 1e-10);
      CHECK(std::abs(f.ac.value(tr.obs, 1) - tr.value) <= 1e-12);
      CHECK(tr.reward > -10.0);
      CHECK(tr.reward < 10.0);
      CHECK(tr.raw_reward <= 0.0);
      CHECK(tr.done == ((i + 1) % 50 == 0));
      dones += tr.done;
    }
    CHECK(dones == 16);
    for (const auto& e : buf.episodes) CHECK(e.fingertip_path.size() == 51);
  }

  TEST_CASE("rollout without normalizer trains on raw rewards") {
    Fixture f(0, 2);
    RolloutOptions opt;
    opt.episodes_per_env = 1;
    const auto buf = collect_rollout(0, f.ac, f.envs, f.rngs, nullptr, opt);
    CHECK(buf.size() == 100);
    for (const auto& tr : buf.transitions) CHECK(tr.reward == tr.raw_reward);
    CHECK(buf.mean_raw_return() == buf.mean_train_return());
  }

  TEST_CASE("rollouts are reproducible") {
    Fixture a(2), b(2);
    RolloutOptions opt;
    const auto x = collect_rollout(2, a.ac, a.envs, a.rngs, nullptr, opt);
    const auto y = collect_rollout(2, b.ac, b.envs, b.rngs, nullptr, opt);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x.transitions[i].action == y.transitions[i].action);
      CHECK(x.transitions[i].raw_reward == y.transitions[i].raw_reward);
    }
  }

  TEST_CASE("mean-action rollouts use the policy mean") {
    Fixture f(0, 2);
    RolloutOptions opt;
    opt.episodes_per_env = 1;
    opt.mode = ActionMode::Mean;
    const auto buf = collect_rollout(0, f.ac, f.envs, f.rngs, nullptr, opt);
    for (const auto& tr : buf.transitions) CHECK(tr.action == f.ac.mean_action(tr.obs, 0));
  }

  TEST_CASE("gae degenerate cases and brute-force oracle") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      RolloutBuffer buf;
      // Several episodes back to back, lengths 1..10.
      std::vector<std::vector<double>> rs, vs;
      const int episodes = 1 + trial % 3;
      for (int e = 0; e < episodes; ++e) {
        const int len = 1 + static_cast<int>(rng() % 10);
        rs.emplace_back();
        vs.emplace_back();
        for (int t = 0; t < len; ++t) {
          Transition tr;
          tr.reward = oracle::randn(rng);
          tr.value = oracle::randn(rng);
          tr.done = t + 1 == len;
          rs.back().push_back(tr.reward);
          vs.back().push_back(tr.value);
          buf.transitions.push_back(tr);
        }
      }
      const double gamma = 0.9 + 0.099 * (trial % 5) / 4.0;
      const double lambda = 0.5 + 0.1 * (trial % 6);
      compute_gae(buf, gamma, lambda);
      std::size_t i = 0;
      for (std::size_t e = 0; e < rs.size(); ++e) {
        const auto ref = oracle::brute_force_gae(rs[e], vs[e], gamma, lambda);
        for (std::size_t t = 0; t < ref.size(); ++t, ++i) {
          CHECK(std::abs(buf.advantages[i] - ref[t]) <= 1e-10);
          CHECK(std::abs(buf.returns[i] - (ref[t] + vs[e][t])) <= 1e-10);
        }
      }

      compute_gae(buf, gamma, 0.0);
      for (std::size_t k = 0; k < buf.size(); ++k) {
        const auto& tr = buf.transitions[k];
        const double next = tr.done ? 0.0 : buf.transitions[k + 1].value;
        CHECK(buf.advantages[k] == tr.reward + gamma * next - tr.value);
      }
      compute_gae(buf, 0.0, lambda);
      for (std::size_t k = 0; k < buf.size(); ++k)
        CHECK(buf.advantages[k] == buf.transitions[k].reward - buf.transitions[k].value);
    }
  }

  TEST_CASE("clipped surrogate examples") {
    CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(2.4).epsilon(1e-15));
    CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8).epsilon(1e-15));
    CHECK(clipped_surrogate(1.1, 3.0, 0.2) == doctest::Approx(3.3).epsilon(1e-15));
    CHECK(clipped_surrogate(0.5, 1.0, 0.2) == 0.5);  // pessimistic unclipped branch
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
      const double r = std::exp(oracle::randn(rng, 0.5)), a = oracle::randn(rng);
      CHECK(clipped_surrogate(r, a, 0.2) <= r * a);
    }
  }

  TEST_CASE("clipped value loss examples") {
    // Inside the clip window both branches agree.
    CHECK(clipped_value_loss(1.1, 1.0, 0.0, 0.2) == doctest::Approx(0.5 * 1.21));
    // Outside the window the larger of the two squared errors is used.
    CHECK(clipped_value_loss(1.5, 1.0, 2.0, 0.2) == doctest::Approx(0.5 * 0.64));
    CHECK(clipped_value_loss(1.5, 1.0, 1.4, 0.2) == doctest::Approx(0.5 * 0.04));
  }

  TEST_CASE("adam traces") {
    SUBCASE("zero gradient leaves parameters") {
      Vec p = Vec::Constant(3, 0.7), m = Vec::Zero(3), v = Vec::Zero(3);
      for (long s = 1; s <= 5; ++s) adam_update(p, Vec::Zero(3), m, v, s, AdamHyper{});
      CHECK(p == Vec::Constant(3, 0.7));
    }
    SUBCASE("three scalar steps match the hand recurrence") {
      const AdamHyper h{0.1, 0.9, 0.999, 1e-8};
      Vec p = Vec::Constant(1, 1.0), m = Vec::Zero(1), v = Vec::Zero(1);
      const double grads[3] = {0.5, -0.2, 0.3};
      double hp = 1.0, hm = 0.0, hv = 0.0;
      for (int s = 1; s <= 3; ++s) {
        const double g = grads[s - 1];
        hm = 0.9 * hm + 0.1 * g;
        hv = 0.999 * hv + 0.001 * g * g;
        const double mhat = hm / (1.0 - std::pow(0.9, s));
        const double vhat = hv / (1.0 - std::pow(0.999, s));
        hp -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        adam_update(p, Vec::Constant(1, g), m, v, s, h);
        CHECK(std::abs(p[0] - hp) <= 1e-12);
      }
    }
    SUBCASE("constant gradient steps approach lr * sign(g)") {
      const AdamHyper h{1e-3};
      Vec p = Vec::Zero(2), m = Vec::Zero(2), v = Vec::Zero(2);
      Vec g(2);
      g << 4.0, -0.01;
      Vec prev = p;
      for (long s = 1; s <= 2000; ++s) {
        prev = p;
        adam_update(p, g, m, v, s, h);
      }
      const Vec step = p - prev;
      CHECK(std::abs(step[0] + 1e-3) <= 1e-8);
      CHECK(std::abs(step[1] - 1e-3) <= 1e-6);
    }
  }

  TEST_CASE("reward normalizer") {
    RewardNormalizer norm(3, 0.99);
    std::mt19937_64 rng(4);
    std::vector<double> all_returns;
    std::vector<double> ret(3, 0.0);
    for (int t = 0; t < 400; ++t) {
      std::vector<double> raw{oracle::randn(rng, 2.0) - 1.0, -std::abs(oracle::randn(rng)), -5.0};
      std::vector<char> done(3, (t + 1) % 50 == 0);
      const auto before = raw;
      const auto out = norm.normalize(raw, done);
      CHECK(raw == before);
      for (int e = 0; e < 3; ++e) {
        ret[e] = ret[e] * 0.99 + raw[e];
        all_returns.push_back(ret[e]);
        CHECK(out[e] > -10.0);
        CHECK(out[e] < 10.0);
        if (done[e]) ret[e] = 0.0;
      }
    }
    double mean = 0.0;
    for (double r : all_returns) mean += r;
    mean /= static_cast<double>(all_returns.size());
    double var = 0.0;
    for (double r : all_returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(all_returns.size());
    CHECK(norm.stats().mean() == doctest::Approx(mean).epsilon(1e-5));
    CHECK(norm.stats().var() == doctest::Approx(var).epsilon(1e-4));

    RewardNormalizer restored;
    restored.from_json(norm.to_json());
    std::vector<double> r{-1.0, -2.0, -3.0};
    std::vector<char> d(3, 0);
    CHECK(restored.normalize(r, d) == norm.normalize(r, d));
  }

  TEST_CASE("normalized rewards stay strictly inside the clip range") {
    RewardNormalizer norm(1, 0.0, 10.0);
    std::vector<char> d{0};
    std::vector<double> tiny{-1e-6};
    // Enough history that one outlier cannot inflate the variance past 10x.
    for (int i = 0; i < 400; ++i) norm.normalize(tiny, d);
    std::vector<double> huge{-1e6};
    const auto out = norm.normalize(huge, d);
    CHECK(out[0] > -10.0);
    CHECK(out[0] < -9.999);
  }

  TEST_CASE("ratio-one surrogate is zero after advantage normalization") {
    Fixture f;
    f.activate(1);
    RewardNormalizer norm(8, 0.99);
    auto buf = collect_rollout(1, f.ac, f.envs, f.rngs, &norm, RolloutOptions{});
    compute_gae(buf, 0.99, 0.95);
    AdamState aopt, copt;
    std::mt19937_64 rng(3);
    Hyper h;
    h.epochs = 1;
    const auto stats = ppo_update(buf, f.ac, aopt, copt, 1, h, 3e-4, rng);
    CHECK(std::abs(stats.first_surrogate) <= 1e-8);
    CHECK(stats.optimizer_steps == 13);  // 800 / 64 rounded up
  }

  TEST_CASE("ppo_update touches only the active column") {
    Fixture f(2);
    f.activate(2);
    std::vector<std::string> actor_before, critic_before;
    for (std::size_t m = 0; m < 3; ++m) {
      actor_before.push_back(serialize_module(f.ac.actor.module(m)));
      critic_before.push_back(serialize_module(f.ac.critic.module(m)));
    }
    const std::vector<Vec> ls_before = f.ac.log_std;
    RewardNormalizer norm(8, 0.99);
    auto buf = collect_rollout(2, f.ac, f.envs, f.rngs, &norm, RolloutOptions{});
    compute_gae(buf, 0.99, 0.95);
    AdamState aopt, copt;
    std::mt19937_64 rng(3);
    int violations = 0;
    const auto stats = ppo_update(buf, f.ac, aopt, copt, 2, Hyper{}, 3e-4, rng, [&](int) {
      for (std::size_t m = 0; m < 2; ++m) {
        violations += serialize_module(f.ac.actor.module(m)) != actor_before[m];
        violations += serialize_module(f.ac.critic.module(m)) != critic_before[m];
        violations += f.ac.log_std[m] != ls_before[m];
      }
    });
    CHECK(violations == 0);
    CHECK(stats.optimizer_steps == 130);
    CHECK(serialize_module(f.ac.actor.module(2)) != actor_before[2]);
    CHECK(serialize_module(f.ac.critic.module(2)) != critic_before[2]);
    CHECK(f.ac.log_std[2] != ls_before[2]);
    CHECK(std::isfinite(stats.policy_loss));
    CHECK(stats.grad_norm > 0.0);
  }

  TEST_CASE("ppo_update preconditions") {
    Fixture f;
    RewardNormalizer norm(8, 0.99);
    auto buf = collect_rollout(1, f.ac, f.envs, f.rngs, &norm, RolloutOptions{});
    AdamState aopt, copt;
    std::mt19937_64 rng(3);
    f.activate(1);
    CHECK_THROWS_AS(ppo_update(buf, f.ac, aopt, copt, 1, Hyper{}, 3e-4, rng), ConfigError);  // no GAE yet
    compute_gae(buf, 0.99, 0.95);
    set_frozen(f.ac.actor, 0, false);
    CHECK_THROWS_AS(ppo_update(buf, f.ac, aopt, copt, 1, Hyper{}, 3e-4, rng), ConfigError);
    f.activate(1);
    buf.transitions[5].reward = std::nan("");
    compute_gae(buf, 0.99, 0.95);
    CHECK_THROWS_AS(ppo_update(buf, f.ac, aopt, copt, 1, Hyper{}, 3e-4, rng), TrainingError);
  }

  TEST_CASE("log-std stays within bounds during updates") {
    Fixture f(0, 2);
    f.activate(0);
    f.ac.log_std[0] << 1.999, -19.999;
    RolloutOptions opt;
    opt.episodes_per_env = 1;
    auto buf = collect_rollout(0, f.ac, f.envs, f.rngs, nullptr, opt);
    compute_gae(buf, 0.99, 0.95);
    AdamState aopt, copt;
    std::mt19937_64 rng(3);
    ppo_update(buf, f.ac, aopt, copt, 0, Hyper{}, 0.1, rng);
    CHECK(f.ac.log_std[0].maxCoeff() <= 2.0);
    CHECK(f.ac.log_std[0].minCoeff() >= -20.0);
  }

  TEST_CASE("one-dimensional bandit converges") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto res = oracle::run_bandit(seed);
      CAPTURE(seed);
      CHECK(res.iterations_to_converge > 0);
      CHECK(std::abs(res.final_mean) < 0.2);
    }
  }
}
