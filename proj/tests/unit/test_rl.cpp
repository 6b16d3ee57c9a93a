#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "error.hpp"
#include "rl/ppo.hpp"
#include "rl/rl_controller.hpp"

using namespace vlmlight;

namespace {

StateTensor random_state(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  StateTensor s;
  for (auto& v : s.data) v = n(rng);
  return s;
}

PPOBatch random_batch(std::mt19937_64& rng, int n, int phases) {
  std::normal_distribution<double> N(0.0, 1.0);
  PPOBatch b;
  for (int i = 0; i < n; ++i) {
    const auto s = random_state(rng);
    b.states.insert(b.states.end(), s.data.begin(), s.data.end());
    std::vector<int> feasible;
    for (int j = 0; j < phases; ++j) {
      const bool ok = j == 0 || (i % 2 == 1);
      b.masks.push_back(ok ? 1 : 0);
      if (ok) feasible.push_back(j + 1);
    }
    b.actions.push_back(feasible[static_cast<size_t>(i) % feasible.size()]);
    b.old_logp.push_back(-1.0 + 0.1 * N(rng));
    b.advantages.push_back(N(rng));
    b.returns.push_back(N(rng));
  }
  return b;
}

}  // namespace

TEST_CASE("GAE on a two-step hand example") {
  // gamma 0.5, lambda 1: delta = (0.75, 0.5), A = (1.0, 0.5), R = A + V.
  const auto [adv, ret] = gae_advantages({1.0, 1.0}, {0.5, 0.5}, 0.0, 0.5, 1.0);
  CHECK(adv[0] == doctest::Approx(1.0));
  CHECK(adv[1] == doctest::Approx(0.5));
  CHECK(ret[0] == doctest::Approx(1.5));
  CHECK(ret[1] == doctest::Approx(1.0));
  const auto [a2, r2] = gae_advantages({0.0}, {0.0}, 2.0, 0.9, 0.95);
  CHECK(a2[0] == doctest::Approx(1.8));  // bootstrap for a truncated segment
}

TEST_CASE("clipped surrogate and value loss on hand values") {
  // ratios 1.5 (clipped to 1.2) and 0.5 (unclipped), advantages +1.
  const auto l = ppo_losses({std::log(1.5), std::log(0.5)}, {0.0, 0.0}, {1.0, 1.0}, {0.0, 0.0}, {1.0, 3.0}, 0.2, 0.5);
  CHECK(l.policy == doctest::Approx(0.85));
  CHECK(l.value == doctest::Approx(5.0));
  CHECK(l.total == doctest::Approx(-0.85 + 2.5));
  CHECK(l.d_logp[0] == 0.0);
  CHECK(l.d_logp[1] == doctest::Approx(-0.25));
  CHECK(l.d_value[1] == doctest::Approx(0.5 * 2.0 * (0.0 - 3.0) / 2.0));
}

TEST_CASE("masked log-softmax puts no mass outside the mask") {
  const double logits[4] = {3.0, 1.0, -2.0, 0.5};
  const auto lp = masked_log_softmax(logits, 4, {false, true, false, true});
  CHECK(std::isinf(lp[0]));
  CHECK(std::isinf(lp[2]));
  CHECK(std::exp(lp[1]) + std::exp(lp[3]) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("PPO total-loss gradient matches central differences") {
  PolicyNet net(NetConfig{8, 2, 16, 4}, 7);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N(0.0, 1.0);
  for (auto& p : net.params()) p += 0.3 * N(rng);
  const auto batch = random_batch(rng, 6, 4);
  ParamVector grad(net.param_count(), 0.0);
  ppo_batch_loss(net, batch, 0.2, 0.5, &grad);
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < net.param_count(); ++k) {
    const double saved = net.params()[k];
    const double h = 1e-5;
    net.params()[k] = saved + h;
    const double up = ppo_batch_loss(net, batch, 0.2, 0.5, nullptr).total;
    net.params()[k] = saved - h;
    const double down = ppo_batch_loss(net, batch, 0.2, 0.5, nullptr).total;
    net.params()[k] = saved;
    const double fd = (up - down) / (2.0 * h);
    num += (fd - grad[k]) * (fd - grad[k]);
    den += fd * fd;
  }
  CHECK(std::sqrt(num / den) <= 1e-4);
}

TEST_CASE("policy output is invariant to permuting movement tokens") {
  PolicyNet net(NetConfig{}, 11);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N(0.0, 1.0);
  for (auto& p : net.params()) p += 0.05 * N(rng);
  std::vector<int> perm(kTokens);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = random_state(rng);
    std::shuffle(perm.begin(), perm.end(), rng);
    StateTensor p;
    for (int f = 0; f < kFrames; ++f)
      for (int t = 0; t < kTokens; ++t)
        for (int k = 0; k < kFeatureDim; ++k) p.at(f, perm[static_cast<size_t>(t)], k) = s.at(f, t, k);
    const auto a = net.evaluate(s);
    const auto b = net.evaluate(p);
    for (size_t j = 0; j < a.probs.size(); ++j) CHECK(std::abs(a.probs[j] - b.probs[j]) <= 1e-6);
    CHECK(std::abs(a.value - b.value) <= 1e-6);
  }
}

TEST_CASE("action probabilities are normalized over the feasible set") {
  PolicyNet net(NetConfig{}, 2);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_state(rng);
    std::vector<PhaseId> feasible;
    for (int p = 1; p <= 4; ++p)
      if (rng() % 2 || p == 1 + static_cast<int>(i % 4)) feasible.push_back(p);
    const auto out = net.evaluate(s, feasible);
    double sum = 0.0;
    for (int p = 1; p <= 4; ++p) {
      const bool ok = std::find(feasible.begin(), feasible.end(), p) != feasible.end();
      if (!ok) CHECK(out.probs[static_cast<size_t>(p - 1)] == 0.0);
      sum += out.probs[static_cast<size_t>(p - 1)];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    const PhaseId g = net.greedy_action(s, feasible);
    CHECK(std::find(feasible.begin(), feasible.end(), g) != feasible.end());
  }
}

TEST_CASE("frame history replicates the earliest frame") {
  Frame a{}, b{};
  a[0][0] = 1.0;
  b[0][0] = 2.0;
  FrameHistory h;
  CHECK_THROWS_AS(h.state(), Error);
  h.push(a);
  h.push(b);
  const auto s = h.state();
  CHECK(s.at(0, 0, 0) == 1.0);
  CHECK(s.at(2, 0, 0) == 1.0);
  CHECK(s.at(3, 0, 0) == 1.0);
  CHECK(s.at(4, 0, 0) == 2.0);
}

TEST_CASE("checkpoints round trip bit for bit") {
  PolicyNet net(NetConfig{}, 4);
  const std::string path = "unit_policy.bin";
  save_checkpoint(net, 6, path);
  int m = 0;
  const auto back = load_checkpoint(path, &m);
  CHECK(m == 6);
  CHECK(back.params() == net.params());
  CHECK_THROWS_AS(load_checkpoint("does-not-exist.bin"), Error);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto scenario = builtin_scenario("massy");
  PPOConfig c;
  c.envs = 2;
  c.buffer = 40;
  c.batch = 20;
  c.epochs = 2;
  c.total_steps = 80;
  c.t_max = 100;
  const auto a = train(scenario, c, 1);
  const auto b = train(scenario, c, 1);
  CHECK(a.net.params() == b.net.params());
  CHECK(a.curve.size() == 2);
  CHECK(format_reward_curve(a.curve) == format_reward_curve(b.curve));
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
