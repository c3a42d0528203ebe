#include "doctest.h"

#include <cmath>
#include <numeric>

#include "grail/ppo.hpp"
#include "grail/run_config.hpp"
#include "support/oracles.hpp"

using namespace grail;
using grail::testing::brute_force_gae;
using grail::testing::data_dir;

namespace {

RunConfig smoke() { return load_run_config(data_dir() + "/configs/ladderworld_smoke.ini"); }

// A minibatch whose old log-probs come from the agent itself (ratio 1).
Minibatch batch_for(HybridAgent& agent, const EnvSpec& spec, int n, std::uint64_t seed) {
  Minibatch b;
  auto env = make_env(spec);
  Rng rng(seed);
  Scene s = env->reset(seed);
  for (int i = 0; i < n; ++i) {
    b.scenes.push_back(s);
    const int a = static_cast<int>(rng.below(3));
    b.actions.push_back(a);
    s = env->step(a).scene;
  }
  ad::Tape t;
  const AgentOutput out = agent.forward(t, b.scenes, Trainable::none());
  for (int i = 0; i < n; ++i) {
    b.old_log_probs.push_back(std::log(std::max(out.pi.at(i, b.actions[static_cast<std::size_t>(i)]), ad::kLogFloor)));
    b.advantages.push_back(rng.uniform(-1, 1));
    b.returns.push_back(rng.uniform(-2, 2));
  }
  b.advantages = normalize_advantages(b.advantages);
  return b;
}

double grad_mass(const std::vector<ad::Parameter*>& ps) {
  double s = 0;
  for (const auto* p : ps) {
    if (p->grad.size()) s += p->grad.cwiseAbs().sum();
  }
  return s;
}

}  // namespace

TEST_SUITE("ppo") {

TEST_CASE("GAE closed forms") {
  const GaeResult two = gae({1, 1}, {0, 0}, {0, 0}, {0}, 2, 1, 0.99, 0.95);
  CHECK(two.advantages[0] == doctest::Approx(1.9405).epsilon(1e-12));
  CHECK(two.advantages[1] == doctest::Approx(1.0));
  // lambda = 0 reduces to the one-step TD residual.
  const GaeResult td = gae({0.5}, {0.2}, {0}, {1.0}, 1, 1, 0.9, 0.0);
  CHECK(td.advantages[0] == doctest::Approx(0.5 + 0.9 * 1.0 - 0.2));
  // A done after step 0 stops leakage.
  const GaeResult cut = gae({1, 5}, {0.3, 0.7}, {1, 0}, {2.0}, 2, 1, 0.99, 0.95);
  CHECK(cut.advantages[0] == doctest::Approx(1 - 0.3));
  for (std::size_t i = 0; i < 2; ++i) CHECK(cut.returns[i] == doctest::Approx(cut.advantages[i] + std::vector<double>{0.3, 0.7}[i]));
  CHECK_THROWS_AS(gae({1}, {0, 0}, {0}, {0}, 1, 1, 0.99, 0.95), ShapeError);
}

TEST_CASE("GAE matches the brute-force sum") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = rng.range(1, 32);
    const int envs = rng.range(1, 4);
    const int n = len * envs;
    std::vector<double> r(n), v(n), boot(envs);
    std::vector<std::uint8_t> d(n);
    for (int i = 0; i < n; ++i) {
      r[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
      d[i] = rng.uniform() < 0.1;
    }
    for (auto& b : boot) b = rng.uniform(-1, 1);
    const double g = rng.uniform(0.8, 1.0);
    const double l = rng.uniform(0.0, 1.0);
    const GaeResult fast = gae(r, v, d, boot, len, envs, g, l);
    const auto slow = brute_force_gae(r, v, d, boot, len, envs, g, l);
    for (int i = 0; i < n; ++i) CHECK(std::fabs(fast.advantages[i] - slow[i]) <= 1e-9);
  }
}

TEST_CASE("all-done rollouts treat each step on its own") {
  const GaeResult g = gae({1, 2, 3}, {0.5, 0.5, 0.5}, {1, 1, 1}, {9}, 3, 1, 0.99, 0.95);
  CHECK(g.advantages == std::vector<double>{0.5, 1.5, 2.5});
}

TEST_CASE("advantage normalization") {
  Rng rng(1);
  std::vector<double> a(257);
  for (auto& x : a) x = rng.uniform(-3, 10);
  const auto n = normalize_advantages(a);
  const double mean = std::accumulate(n.begin(), n.end(), 0.0) / n.size();
  double var = 0;
  for (double x : n) var += (x - mean) * (x - mean);
  CHECK(std::fabs(mean) <= 1e-6);
  CHECK(std::fabs(std::sqrt(var / n.size()) - 1.0) <= 1e-4);
  // Constant input hits the floor instead of dividing by zero.
  for (double x : normalize_advantages(std::vector<double>(5, 2.0))) CHECK(x == 0.0);
}

TEST_CASE("clipped surrogate") {
  CHECK(clipped_objective(1.0, 1.0, 0.1) == 1.0);
  CHECK(clipped_objective(1.3, 1.0, 0.1) == doctest::Approx(1.1));
  CHECK(clipped_objective(0.5, -1.0, 0.1) == doctest::Approx(-0.9));
}

TEST_CASE("sampling from a probability row") {
  const double p[] = {0.2, 0.3, 0.5};
  CHECK(sample_index(p, 3, 0.0) == 0);
  CHECK(sample_index(p, 3, 0.1) == 0);
  CHECK(sample_index(p, 3, 0.25) == 1);
  CHECK(sample_index(p, 3, 0.99) == 2);
  const double q[] = {0.5, 0.5, 0.0};
  CHECK(sample_index(q, 3, 0.9999999999999999) == 1);
}

TEST_CASE("config defaults and validation") {
  TrainConfig c;
  CHECK(c.batch_size() == 1024);
  CHECK(c.minibatch_size() == 256);
  CHECK(c.iterations() == 196);
  CHECK(c.action_repeat() == 4);
  CHECK_NOTHROW(c.validate());
  c.c_vf = -1;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.c_vf") != std::string::npos);
  }
  TrainConfig d;
  d.clip_eps = 1.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  TrainConfig e;
  e.minibatches = 3;
  CHECK_THROWS_AS(e.validate(), ConfigError);
}

TEST_CASE("loss composition") {
  const RunConfig cfg = smoke();
  auto agent = cfg.make_agent(cfg.full);
  agent->init(4);
  const Minibatch b = batch_for(*agent, cfg.full, 12, 8);
  std::map<std::string, ProxyFn> proxies = cfg.proxies;
  ConceptAligner al(proxies, cfg.aligned, 5);
  TrainConfig tc = cfg.train;
  tc.stage = 2;
  const Trainable tr = tc.trainable();

  SUBCASE("ratio one at the sampling policy") {
    ad::Tape t;
    const CoreLoss core = ppo_core_loss(t, b, *agent, tc, tr);
    const double mean_adv = std::accumulate(b.advantages.begin(), b.advantages.end(), 0.0) / b.advantages.size();
    CHECK(core.l_clip.item() == doctest::Approx(mean_adv).epsilon(1e-9));
  }
  SUBCASE("no alignment coefficient") {
    tc.c_ca = 0;
    ad::Tape t;
    const LossTerms l = total_loss(t, b, *agent, tc, tr, &al, 0, 10);
    const double expect = tc.c_vf * l.core.l_vf.item() - l.core.l_clip.item() - tc.c_ae * l.core.entropy_pi.item() -
                          tc.c_be * l.core.entropy_blend.item();
    CHECK(l.total.item() == expect);
  }
  SUBCASE("annealed to zero at the horizon") {
    tc.c_ca = 0.3;
    tc.gamma_ca = 1.0;
    ad::Tape t;
    const LossTerms end = total_loss(t, b, *agent, tc, tr, &al, 10, 10);
    CHECK(end.anneal == 0.0);
    CHECK(end.l_ca > 0.0);
    tc.c_ca = 0;
    ad::Tape t2;
    CHECK(total_loss(t2, b, *agent, tc, tr, &al, 10, 10).total.item() == end.total.item());
  }
  SUBCASE("only the surrogate") {
    tc.c_vf = tc.c_ae = tc.c_be = tc.c_ca = 0;
    ad::Tape t;
    const LossTerms l = total_loss(t, b, *agent, tc, tr, &al, 0, 10);
    CHECK(l.total.item() == -l.core.l_clip.item());
    tc.c_vf = 0.5;
    ad::Tape t2;
    const LossTerms l2 = total_loss(t2, b, *agent, tc, tr, &al, 0, 10);
    CHECK(l2.total.item() == doctest::Approx(-l2.core.l_clip.item() + 0.5 * l2.core.l_vf.item()).epsilon(1e-7));
  }
}

TEST_CASE("gradient routing per stage") {
  const RunConfig cfg = smoke();
  auto agent = cfg.make_agent(cfg.full);
  agent->init(6);
  Rng rr(1);
  agent->theta().randomize(rr, 0.3);
  ConceptAligner al(cfg.proxies, cfg.aligned, 5);
  const Minibatch b = batch_for(*agent, cfg.full, 10, 3);
  auto zero_all = [&] {
    for (auto* p : agent->checkpoint_arrays()) p->zero_grad();
  };

  TrainConfig s1 = cfg.train;
  s1.stage = 1;
  agent->force_beta_zero = true;
  zero_all();
  {
    ad::Tape t;
    t.backward(total_loss(t, b, *agent, s1, s1.trainable(), &al, 0, 10).total);
  }
  CHECK(grad_mass(agent->theta().parameters()) == 0.0);
  CHECK(grad_mass(agent->blender_net().parameters()) == 0.0);
  CHECK(grad_mass({&agent->blend_weights(), &agent->phi()}) == 0.0);
  CHECK(grad_mass(agent->psi_parameters()) > 0.0);

  TrainConfig s2 = cfg.train;
  s2.stage = 2;
  agent->force_beta_zero = false;
  zero_all();
  {
    ad::Tape t;
    t.backward(total_loss(t, b, *agent, s2, s2.trainable(), &al, 0, 10).total);
  }
  CHECK(grad_mass(agent->psi_parameters()) == 0.0);
  CHECK(grad_mass(agent->theta().parameters()) > 0.0);
}

TEST_CASE("evaluation") {
  const RunConfig cfg = smoke();
  auto agent = cfg.make_agent(cfg.simplified);
  agent->init(2);
  agent->force_beta_zero = true;
  EvalConfig ec;
  ec.episodes = 5;
  ec.seed = 9;
  ec.action_repeat = 4;
  ec.episode_cap = 40;
  const EvalResult a = evaluate(*agent, cfg.simplified, ec);
  const EvalResult b = evaluate(*agent, cfg.simplified, ec);
  CHECK(a.returns == b.returns);
  CHECK(a.goals == b.goals);
  CHECK(a.episodes == 5);
  ec.episode_cap = 1;
  const EvalResult z = evaluate(*agent, cfg.simplified, ec);
  CHECK(z.mean_return == 0.0);
  CHECK(z.goals_per_episode == 0.0);
  CHECK(z.completion_rate == 0.0);
}

}  // TEST_SUITE
