#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "grail/gradcheck.hpp"
#include "grail/reasoner.hpp"
#include "support/oracles.hpp"

using namespace grail;
using namespace grail::logic;

namespace {

const Decls& decls() {
  static const Decls d = parse_decls(
      "action go_right(object)\n"
      "action up(world)\n"
      "action down(world)\n"
      "type type(object, const)\n"
      "spatial left_of(object, object)\n"
      "spatial left_of_ladder(agent, ladder)\n"
      "status ready(world)\n");
  return d;
}

Scene agent_and_ladders(int ladders) {
  Scene s;
  s.objects.push_back(Object{"agent", 20, 100, true, ""});
  for (int i = 0; i < ladders; ++i) s.objects.push_back(Object{"ladder", 60.0 + 40 * i, 150, true, ""});
  return s;
}

const StatusRegistry& status() {
  static const StatusRegistry r = {{"ready", [](const Scene& s, int) { return s.attribute("ready", 1.0); }}};
  return r;
}

ValuationMap nets_with_constant(double p) {
  ValuationMap m;
  for (const std::string name : {"left_of", "left_of_ladder"}) {
    ValuationNet n(name);
    Rng rng(1);
    n.init(rng);
    n.parameters().back()->value(0, 0) = std::log(p / (1 - p));
    m.emplace(name, std::move(n));
  }
  return m;
}

}  // namespace

TEST_SUITE("reasoner") {

TEST_CASE("typed pairs decide which spatial atoms exist") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L).", decls());
  ValuationMap nets = nets_with_constant(0.5);
  ad::Tape t;
  const GroundAtomTable table = evaluate_atoms(t, agent_and_ladders(2), prog, nets, status());
  int spatial = 0;
  for (const auto& [atom, entry] : table.atoms(0)) spatial += entry.tag == GroundAtomTable::Tag::kSpatial;
  CHECK(spatial == 2);
  CHECK(table.type_value(0, 1, "ladder") == 1.0);
  CHECK(table.type_value(0, 1, "agent") == 0.0);
}

TEST_CASE("empty scenes keep only global status atoms") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L), ready(X).", decls());
  ValuationMap nets = nets_with_constant(0.5);
  ad::Tape t;
  const GroundAtomTable table = evaluate_atoms(t, Scene{}, prog, nets, status());
  REQUIRE(table.atoms(0).size() == 1);
  CHECK(table.atoms(0).begin()->second.tag == GroundAtomTable::Tag::kStatus);
}

TEST_CASE("missing valuation or status function") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L), ready(X).", decls());
  ValuationMap none;
  ad::Tape t;
  CHECK_THROWS_AS(evaluate_atoms(t, agent_and_ladders(1), prog, none, status()), MissingValuation);
  ValuationMap nets = nets_with_constant(0.5);
  CHECK_THROWS_AS(evaluate_atoms(t, agent_and_ladders(1), prog, nets, StatusRegistry{}), MissingStatusFn);
}

TEST_CASE("grounding enumerates typed substitutions") {
  const auto prog = parse_program("go_right(O1):-type(O1,agent),type(O2,ladder),left_of(O1,O2).", decls());
  CHECK(ground(prog, agent_and_ladders(2)).size() == 2);
  CHECK(ground(prog, agent_and_ladders(0)).empty());
  const auto global = parse_program("up(X) :- ready(X).", decls());
  CHECK(ground(global, agent_and_ladders(3)).size() == 1);
  for (const auto& g : ground(prog, agent_and_ladders(2))) {
    CHECK(g.body.size() == 1);  // type atoms consumed
    CHECK(g.substitution[0] != g.substitution[1]);
  }
}

TEST_CASE("forward inference closed forms") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L), ready(X).", decls());
  ValuationMap nets = nets_with_constant(0.8);
  ad::Tape t;
  Scene s = agent_and_ladders(1);
  const GroundAtomTable table = evaluate_atoms(t, s, prog, nets, status());
  std::vector<std::vector<GroundedClause>> g{ground(prog, s)};
  const HeadValues hv = forward_infer(t, table, g, t.constant(ad::Matrix::Zero(1, 1)));
  REQUIRE(hv.heads.size() == 1);
  CHECK(hv.values.at(0) == doctest::Approx(0.4).epsilon(1e-12));

  // Two groundings with confidences 0.4 and 0.5 for the same head.
  Scene two = agent_and_ladders(2);
  two.objects[2].x = 10;  // irrelevant to the constant nets
  const auto p2 = parse_program("up(X) :- left_of_ladder(P,L).", decls());
  ValuationMap n2 = nets_with_constant(0.8);
  ad::Tape t2;
  const GroundAtomTable tb = evaluate_atoms(t2, two, p2, n2, status());
  std::vector<std::vector<GroundedClause>> g2{ground(p2, two)};
  REQUIRE(g2[0].size() == 2);
  // Logits so that the two confidences differ: use two clauses instead.
  const auto p3 = parse_program("up(X) :- ready(X).\nup(X) :- ready(X).", decls());
  ad::Tape t3;
  ValuationMap n3 = nets_with_constant(0.5);
  const GroundAtomTable tb3 = evaluate_atoms(t3, two, p3, n3, status());
  ad::Matrix w(2, 1);
  w << std::log(0.4 / 0.6), 0.0;
  std::vector<std::vector<GroundedClause>> g3{ground(p3, two)};
  const HeadValues hv3 = forward_infer(t3, tb3, g3, t3.constant(w));
  REQUIRE(hv3.heads.size() == 1);
  CHECK(hv3.values.at(0) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("saturated weights and true bodies give one") {
  const auto prog = parse_program("up(X) :- ready(X).", decls());
  ValuationMap nets;
  ad::Tape t;
  const Scene s = agent_and_ladders(1);
  const GroundAtomTable table = evaluate_atoms(t, s, prog, nets, status());
  std::vector<std::vector<GroundedClause>> g{ground(prog, s)};
  const HeadValues hv = forward_infer(t, table, g, t.constant(ad::Matrix::Constant(1, 1, 800.0)));
  CHECK(hv.values.at(0) == 1.0);
}

TEST_CASE("action distribution") {
  const auto u = action_distribution(std::vector<double>{0, 0, 0, 0});
  for (double p : u) CHECK(p == doctest::Approx(0.25));
  const auto d = action_distribution(std::vector<double>{0.7, 0.3, 0, 0});
  CHECK(d[0] == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(d[1] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(d[2] < 1e-7);
  CHECK(action_distribution(std::vector<double>{0.2}) == std::vector<double>{1.0});
  ad::Tape t;
  ad::Matrix s(2, 3);
  s << 0.1, 0.5, 0.0, 0.0, 0.0, 0.0;
  const ad::Var p = action_distribution(t.constant(s));
  for (int r = 0; r < 2; ++r) CHECK(p.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("head values are monotone in body atoms") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L).\ndown(X) :- left_of(A,B).", decls());
  const Scene s = agent_and_ladders(2);
  double prev_up = -1;
  double prev_down = -1;
  for (double p : {0.05, 0.2, 0.5, 0.7, 0.95}) {
    ValuationMap nets = nets_with_constant(p);
    ad::Tape t;
    const GroundAtomTable table = evaluate_atoms(t, s, prog, nets, status());
    std::vector<std::vector<GroundedClause>> g{ground(prog, s)};
    std::vector<int> order{decls().index_of("up"), decls().index_of("down")};
    const ad::Var hs = head_scores(t, table, g, t.constant(ad::Matrix::Constant(2, 1, 1.0)), order);
    CHECK(hs.at(0, 0) >= prev_up);
    CHECK(hs.at(0, 1) >= prev_down);
    prev_up = hs.at(0, 0);
    prev_down = hs.at(0, 1);
  }
}

TEST_CASE("object order does not change the action distribution") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L).\ndown(X) :- left_of(A,B).", decls());
  ValuationNet net("left_of");
  Rng rng(4);
  net.mlp().randomize(rng, 0.7);
  ValuationMap nets;
  nets.emplace("left_of", net);
  ValuationNet n2("left_of_ladder");
  n2.mlp().randomize(rng, 0.7);
  nets.emplace("left_of_ladder", n2);
  Scene a = agent_and_ladders(3);
  Scene b = a;
  std::reverse(b.objects.begin(), b.objects.end());
  std::vector<int> order{decls().index_of("up"), decls().index_of("down")};
  auto dist = [&](const Scene& s) {
    ad::Tape t;
    const GroundAtomTable table = evaluate_atoms(t, s, prog, nets, status());
    std::vector<std::vector<GroundedClause>> g{ground(prog, s)};
    return ad::Matrix(action_distribution(head_scores(t, table, g, t.constant(ad::Matrix::Zero(2, 1)), order)).value());
  };
  CHECK((dist(a) - dist(b)).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("head values are differentiable in the valuation nets") {
  const auto prog = parse_program("up(X) :- left_of_ladder(P,L).", decls());
  ValuationNet n("left_of_ladder");
  Rng rng(9);
  n.mlp().randomize(rng, 0.6);
  ValuationMap nets;
  nets.emplace("left_of_ladder", n);
  const Scene s = agent_and_ladders(2);
  auto loss = [&](ad::Tape& t) {
    const GroundAtomTable table = evaluate_atoms(t, s, prog, nets, status(), true);
    std::vector<std::vector<GroundedClause>> g{ground(prog, s)};
    return ad::sum(forward_infer(t, table, g, t.scalar(0.3)).values);
  };
  Rng pick(2);
  const GradcheckStats st = check_gradients(loss, nets.at("left_of_ladder").parameters(), pick, 24);
  CHECK(st.max_error <= 1e-4);
}

TEST_CASE("crisp programs agree with boolean forward chaining") {
  Rng rng(2024);
  for (int i = 0; i < 60; ++i) {
    const auto c = grail::testing::random_crisp_case(rng);
    const auto r = grail::testing::check_crisp_case(c);
    CHECK_MESSAGE(r.equal, c.program_text << r.detail);
  }
}

}  // TEST_SUITE
