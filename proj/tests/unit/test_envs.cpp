#include "doctest.h"

#include <algorithm>
#include <set>

#include "grail/envs.hpp"
#include "support/oracles.hpp"

using namespace grail;
using grail::testing::data_dir;
using grail::testing::scripted_action;

namespace {

EnvSpec spec(const std::string& env, const std::string& variant) {
  return load_env_spec(data_dir() + "/envs/" + env + "_" + variant + ".env");
}

int count_type(const Scene& s, const std::string& t) {
  return static_cast<int>(std::count_if(s.objects.begin(), s.objects.end(), [&](const Object& o) { return o.type == t; }));
}

}  // namespace

TEST_SUITE("envs") {

TEST_CASE("ladderworld reset layout") {
  auto env = make_env(spec("ladderworld", "simplified"));
  const Scene s = env->reset(3);
  const Object& a = s.objects[static_cast<std::size_t>(s.agent_index())];
  CHECK(a.y == 190.0);
  CHECK(count_type(s, "ladder") == 3);
  CHECK(count_type(s, "child") == 1);
  CHECK(count_type(s, "monkey") == 0);
  for (const Object& o : s.objects) {
    if (o.type == "child") CHECK(o.y < a.y);
  }
  CHECK(s.attribute("level") == 0.0);
  CHECK(env->reset(3) == s);
}

TEST_CASE("diverworld reset and status atoms") {
  auto env = make_env(spec("diverworld", "simplified"));
  Scene s = env->reset(1);
  CHECK(s.attribute("carried") == 0.0);
  CHECK(s.attribute("oxygen") == 1.0);
  const StatusRegistry& st = status_registry("diverworld");
  CHECK(st.at("oxygen_low")(s, -1) == 0.0);
  CHECK(st.at("full_divers")(s, -1) == 0.0);
  CHECK(st.at("not_full_divers")(s, -1) == 1.0);
  s.attributes["carried"] = 6;
  CHECK(st.at("full_divers")(s, -1) == 1.0);
  CHECK(st.at("not_full_divers")(s, -1) == 0.0);
  s.attributes["oxygen"] = 0.2;
  CHECK(st.at("oxygen_low")(s, -1) == 1.0);
  CHECK(status_registry("slalomworld").at("true")(s, -1) == 1.0);
  CHECK_THROWS_AS(status_registry("pong"), ConfigError);
}

TEST_CASE("actions are range checked") {
  for (const std::string name : env_names()) {
    auto env = make_env(spec(name, "full"));
    env->reset(0);
    CHECK_THROWS(env->step(env->num_actions()));
    CHECK_THROWS(env->step(-1));
  }
}

TEST_CASE("invalid layouts are rejected") {
  EnvSpec s = spec("ladderworld", "simplified");
  s.layout["floors"] = "100, 150, 70";
  CHECK_THROWS_AS(make_env(s), ConfigError);
  CHECK_THROWS_AS(parse_env_spec("[env]\nname = ladderworld\nvariant = tiny\n"), ConfigError);
}

TEST_CASE("walking to the first ladder and climbing reaches the next floor") {
  auto env = make_env(spec("ladderworld", "simplified"));
  Scene s = env->reset(4);
  int steps = 0;
  while (std::fabs(s.objects[0].x - 132.0) > ladder::kLadderReach) {
    s = env->step(ladder::kRight).scene;
    ++steps;
  }
  for (int k = 0; k < 16; ++k) {
    CHECK(s.attribute("level") == 0.0);
    s = env->step(ladder::kUp).scene;
  }
  CHECK(s.attribute("level") == 1.0);
  CHECK(s.objects[0].y == 130.0);
  // Off the ladder column the agent cannot climb.
  s = env->step(ladder::kLeft).scene;
  s = env->step(ladder::kLeft).scene;
  s = env->step(ladder::kLeft).scene;
  s = env->step(ladder::kLeft).scene;
  const double y = s.objects[0].y;
  s = env->step(ladder::kUp).scene;
  CHECK(s.objects[0].y == y);
}

TEST_CASE("scripted ladder controller hits the analytic goal count") {
  EnvSpec sp = spec("ladderworld", "simplified");
  auto env = make_env(sp);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Scene s = env->reset(seed);
    double spawn = s.objects[0].x;
    int since = 0;
    int frames = 0;
    int goals = 0;
    int budget = sp.episode_cap;
    // Goals that fit in the cap given the observed spawns.
    while (true) {
      const StepResult r = env->step(scripted_action("ladderworld", s));
      ++since;
      ++frames;
      if (r.info.goal_achieved) {
        CHECK(r.reward == sp.goal_reward);
        CHECK(since == grail::testing::ladder_frames_per_goal(spawn));
        CHECK(r.scene.attribute("level") == 0.0);
        budget -= since;
        ++goals;
        since = 0;
        spawn = r.scene.objects[0].x;
      } else {
        CHECK(r.reward == 0.0);
      }
      s = r.scene;
      if (r.done) break;
    }
    CHECK(frames == sp.episode_cap);
    CHECK(budget < grail::testing::ladder_frames_per_goal(spawn));
    CHECK(goals >= 10);
  }
}

TEST_CASE("every environment is solvable by its scripted controller") {
  for (const std::string name : env_names()) {
    for (const std::string variant : {"simplified", "full"}) {
      if (variant == std::string("full") && name != "slalomworld") continue;  // hazards can end full episodes early
      auto env = make_env(spec(name, variant));
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Scene s = env->reset(seed);
        int goals = 0;
        for (int t = 0; t < env->spec().episode_cap; ++t) {
          const StepResult r = env->step(scripted_action(name, s));
          goals += r.info.goal_achieved;
          s = r.scene;
          if (r.done) break;
        }
        CHECK_MESSAGE(goals >= 1, name << " " << variant << " seed " << seed);
      }
    }
  }
}

TEST_CASE("slalom gates and misses") {
  EnvSpec sp = spec("slalomworld", "full");
  auto env = make_env(sp);
  Scene s = env->reset(5);
  std::set<std::string> events;
  double miss_reward = 0;
  // Hold one direction: most gates are missed.
  for (int t = 0; t < 2000; ++t) {
    const StepResult r = env->step(slalom::kLeft);
    for (const auto& e : r.info.events) events.insert(e);
    if (std::find(r.info.events.begin(), r.info.events.end(), "miss") != r.info.events.end()) miss_reward = r.reward;
    if (r.done) break;
  }
  CHECK(events.count("miss") == 1);
  CHECK(miss_reward <= -1.0 - 5.0);
  s = env->reset(5);
  bool gate = false;
  for (int t = 0; t < 200 && !gate; ++t) {
    const StepResult r = env->step(scripted_action("slalomworld", s));
    gate = std::find(r.info.events.begin(), r.info.events.end(), "gate") != r.info.events.end();
    s = r.scene;
  }
  CHECK(gate);
}

TEST_CASE("scenes stay valid and variants differ only by hazards") {
  for (const std::string name : env_names()) {
    auto simple = make_env(spec(name, "simplified"));
    auto full = make_env(spec(name, "full"));
    const Scene a = simple->reset(2);
    const Scene b = full->reset(2);
    std::set<std::string> ta, tb;
    for (const Object& o : a.objects) ta.insert(o.type);
    for (const Object& o : b.objects) tb.insert(o.type);
    CHECK(std::includes(tb.begin(), tb.end(), ta.begin(), ta.end()));
    CHECK(simple->object_types() == full->object_types());
    Rng rng(3);
    for (int t = 0; t < 400; ++t) {
      const StepResult r = full->step(static_cast<int>(rng.below(static_cast<std::uint64_t>(full->num_actions()))));
      CHECK_NOTHROW(r.scene.validate(full->max_objects()));
      if (r.done) full->reset(static_cast<std::uint64_t>(t));
    }
  }
}

TEST_CASE("replays reproduce trajectories") {
  auto env = make_env(spec("diverworld", "full"));
  Replay rp;
  rp.env_fixture = "diverworld_full.env";
  rp.seed = 12;
  rp.action_repeat = 2;
  Rng rng(12);
  for (int i = 0; i < 300; ++i) rp.actions.push_back(static_cast<int>(rng.below(6)));
  const Replay back = parse_replay(format_replay(rp));
  CHECK(back.seed == rp.seed);
  CHECK(back.actions == rp.actions);
  CHECK(back.action_repeat == 2);
  const ReplayOutcome a = run_replay(*env, rp);
  auto env2 = make_env(spec("diverworld", "full"));
  const ReplayOutcome b = run_replay(*env2, back);
  CHECK(a.rewards == b.rewards);
  CHECK(a.total_reward == b.total_reward);
  CHECK(a.steps == b.steps);
}

TEST_CASE("repeated steps stop at the episode end") {
  EnvSpec sp = spec("ladderworld", "simplified");
  sp.episode_cap = 6;
  auto env = make_env(sp);
  env->reset(1);
  CHECK_FALSE(step_repeated(*env, ladder::kLeft, 4).done);
  CHECK(step_repeated(*env, ladder::kLeft, 4).done);
}

}  // TEST_SUITE
