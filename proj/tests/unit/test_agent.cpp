#include "doctest.h"

#include <cmath>

#include "grail/agent.hpp"
#include "grail/checkpoint.hpp"
#include "grail/run_config.hpp"
#include "support/oracles.hpp"

using namespace grail;
using grail::testing::data_dir;

namespace {

RunConfig config(const std::string& name) { return load_run_config(data_dir() + "/configs/" + name + ".ini"); }

std::vector<Scene> scenes_for(const EnvSpec& spec, int n, std::uint64_t seed) {
  auto env = make_env(spec);
  std::vector<Scene> out{env->reset(seed)};
  Rng rng(seed);
  while (static_cast<int>(out.size()) < n) {
    out.push_back(env->step(static_cast<int>(rng.below(static_cast<std::uint64_t>(env->num_actions())))).scene);
  }
  return out;
}

double row_sum(const ad::Var& v, int r) { return v.value().row(r).sum(); }

}  // namespace

TEST_SUITE("agent") {

TEST_CASE("blending endpoints") {
  ad::Tape t;
  ad::Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  const ad::Var pa = t.constant(a);
  const ad::Var pb = t.constant(b);
  CHECK(blend_rows(t.constant(ad::Matrix::Ones(1, 1)), pa, pb).value() == a);
  CHECK(blend_rows(t.constant(ad::Matrix::Zero(1, 1)), pa, pb).value() == b);
  const ad::Var h = blend_rows(t.constant(ad::Matrix::Constant(1, 1, 0.5)), pa, pb);
  CHECK(h.at(0, 0) == 0.5);
  CHECK(h.at(0, 1) == 0.5);
  // Value blending uses the same rule: 0.25 * 2 + 0.75 * (-2).
  const ad::Var v = blend_rows(t.constant(ad::Matrix::Constant(1, 1, 0.25)), t.constant(ad::Matrix::Constant(1, 1, 2.0)),
                               t.constant(ad::Matrix::Constant(1, 1, -2.0)));
  CHECK(v.item() == doctest::Approx(-1.0));
}

TEST_CASE("blender entropy") {
  CHECK(blender_entropy(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(blender_entropy(0.0) == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(blender_entropy(0.0) >= 0.0);
  CHECK(blender_entropy(0.25) == doctest::Approx(0.5623).epsilon(1e-4));
  double best = -1, arg = -1;
  for (int i = 0; i <= 1000; ++i) {
    const double b = i / 1000.0;
    const double h = blender_entropy(b);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(2.0) + 1e-9);
    if (h > best) {
      best = h;
      arg = b;
    }
  }
  CHECK(arg == 0.5);
}

TEST_CASE("blended policies stay on the simplex") {
  Rng rng(17);
  ad::Tape t;
  for (int i = 0; i < 200; ++i) {
    const int A = rng.range(1, 6);
    ad::Matrix a(1, A), b(1, A);
    for (int k = 0; k < A; ++k) {
      a(0, k) = rng.uniform();
      b(0, k) = rng.uniform();
    }
    a /= a.sum();
    b /= b.sum();
    const double beta = rng.uniform();
    const ad::Var p = blend_rows(t.constant(ad::Matrix::Constant(1, 1, beta)), t.constant(a), t.constant(b));
    CHECK(std::fabs(row_sum(p, 0) - 1.0) <= 1e-12);
    CHECK(p.value().minCoeff() >= 0.0);
  }
}

TEST_CASE("stage-1 mode uses the logic policy alone") {
  const RunConfig cfg = config("ladderworld_smoke");
  auto agent = cfg.make_agent(cfg.full);
  agent->init(3);
  agent->force_beta_zero = true;
  const auto scenes = scenes_for(cfg.simplified, 6, 5);
  ad::Tape t;
  Trainable tr;
  tr.psi = true;
  tr.theta = true;
  const AgentOutput out = agent->forward(t, scenes, tr);
  CHECK(out.pi.value() == out.pi_log.value());
  CHECK(out.value.value() == out.v_log.value());
  for (int r = 0; r < 6; ++r) CHECK(out.beta.at(r) == 0.0);

  // The logic distribution equals action_distribution over the head scores.
  ad::Tape t2;
  GroundAtomTable table = evaluate_atoms(t2, scenes, cfg.decls, cfg.decls.state_predicates(), agent->psi(),
                                         status_registry("ladderworld"), false);
  std::vector<std::vector<GroundedClause>> g;
  for (const Scene& s : scenes) g.push_back(ground(agent->layout().policy.program, s));
  const ad::Var hs = head_scores(t2, table, g, t2.constant(agent->phi().value), agent->layout().policy.head_order);
  CHECK(action_distribution(hs).value() == out.pi_log.value());

  // Theta receives no gradient.
  for (auto* p : agent->theta().parameters()) p->zero_grad();
  t.backward(ad::mean(ad::gather(out.pi, {0, 4, 8})));
  for (auto* p : agent->theta().parameters()) CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("neural blender starts undecided") {
  const RunConfig cfg = config("ladderworld_smoke");
  AgentLayout layout = cfg.layout(cfg.full);
  layout.blend_mode = BlendMode::kNeural;
  HybridAgent agent(layout, status_registry("ladderworld"));
  agent.init(1);
  ad::Tape t;
  const AgentOutput out = agent.forward(t, scenes_for(cfg.full, 3, 2), Trainable::none());
  for (int r = 0; r < 3; ++r) {
    CHECK(out.beta.at(r) == 0.5);
    CHECK(std::fabs(row_sum(out.pi, r) - 1.0) <= 1e-9);
  }
}

TEST_CASE("logic blender that always delegates to the logic agent") {
  const RunConfig cfg = config("slalomworld_claude");
  auto agent = cfg.make_agent(cfg.full);
  agent->init(1);
  REQUIRE(agent->blend_weights().size() == 1);
  agent->blend_weights().value(0, 0) = 16.0;
  ad::Tape t;
  const AgentOutput out = agent->forward(t, scenes_for(cfg.full, 4, 3), Trainable::none());
  for (int r = 0; r < 4; ++r) {
    CHECK(out.beta.at(r) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(out.pi.value().row(r) == out.pi_log.value().row(r));
  }
}

TEST_CASE("logic blender with no firing rule gives beta zero") {
  const RunConfig cfg = config("ladderworld_smoke");
  AgentLayout layout = cfg.layout(cfg.full);
  layout.blending = compile_blending(logic::parse_program("logic_agent(X) :- nothing_around(X).", cfg.decls));
  HybridAgent agent(layout, status_registry("ladderworld"));
  agent.init(1);
  Scene s;
  s.objects.push_back(Object{"agent", 80, 130, true, "right"});
  s.objects.push_back(Object{"monkey", 90, 130, true, ""});
  ad::Tape t;
  const AgentOutput out = agent.forward(t, std::vector<Scene>{s}, Trainable::none());
  CHECK(out.beta.at(0) == 0.0);
}

TEST_CASE("object features use presence flags and a fixed layout") {
  const RunConfig cfg = config("ladderworld_smoke");
  auto agent = cfg.make_agent(cfg.full);
  Scene s;
  s.objects.push_back(Object{"agent", 80, 105, true, "left"});
  const ad::Matrix x = agent->object_features(std::vector<Scene>{s});
  CHECK(x.cols() == agent->feature_width());
  CHECK(x(0, 0) == 1.0);
  CHECK(x(0, 2) == 0.5);
  CHECK(x(0, 3) == 0.5);
  const int per = agent->feature_width() / agent->layout().max_objects;
  CHECK(x.block(0, per, 1, x.cols() - per).cwiseAbs().sum() == 0.0);
  Scene crowded;
  for (int i = 0; i < agent->layout().max_objects + 1; ++i) crowded.objects.push_back(Object{"ladder", 10, 10, true, ""});
  CHECK_THROWS(agent->object_features(std::vector<Scene>{crowded}));
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  const std::string dir = grail::testing::scratch_dir("agent_ckpt");
  const RunConfig cfg = config("ladderworld_smoke");
  auto a = cfg.make_agent(cfg.full);
  a->init(11);
  Rng rng(5);
  for (auto* p : a->checkpoint_arrays()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  }
  save_checkpoint(dir + "/a.grailck", *a, "ladderworld", 42);
  auto b = cfg.make_agent(cfg.full);
  b->init(99);
  const CheckpointManifest m = load_checkpoint(dir + "/a.grailck", *b);
  CHECK(m.step == 42);
  CHECK(m.env == "ladderworld");
  const auto pa = a->checkpoint_arrays();
  const auto pb = b->checkpoint_arrays();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  const ValuationNet v = load_valuation(dir + "/a.grailck", "on_ladder");
  CHECK(v.eval(0.1, -0.2) == a->psi().at("on_ladder").eval(0.1, -0.2));
  CHECK_THROWS(load_valuation(dir + "/a.grailck", "nope"));

  const RunConfig other = config("slalomworld_claude");
  auto c = other.make_agent(other.full);
  CHECK_THROWS_AS(load_checkpoint(dir + "/a.grailck", *c), IncompatibleArtifact);

  AgentLayout wide = cfg.layout(cfg.full);
  wide.hidden = 32;
  HybridAgent d(wide, status_registry("ladderworld"));
  CHECK_THROWS_AS(load_checkpoint(dir + "/a.grailck", d), IncompatibleArtifact);
  CHECK_THROWS(read_manifest(dir + "/missing.grailck"));
}

}  // TEST_SUITE
