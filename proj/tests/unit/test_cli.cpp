#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "grail/checkpoint.hpp"
#include "grail/run_config.hpp"
#include "json.hpp"
#include "support/oracles.hpp"

using namespace grail;
using grail::testing::data_dir;
using grail::testing::read_text;
using grail::testing::scratch_dir;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
  nlohmann::json summary;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "grail");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  std::string last;
  std::istringstream lines(o.out);
  for (std::string l; std::getline(lines, l);) {
    if (!l.empty()) last = l;
  }
  o.summary = nlohmann::json::parse(last, nullptr, false);
  return o;
}

std::string cfg(const std::string& name) { return data_dir() + "/configs/" + name + ".ini"; }

// One smoke run shared by the tests below.
const std::string& smoke_run() {
  static const std::string dir = [] {
    const std::string d = scratch_dir("cli_smoke");
    const Outcome o = run({"train", "--config", cfg("ladderworld_smoke"), "--stage", "1", "--seed", "7", "--out", d, "--quiet"});
    REQUIRE(o.code == 0);
    return d;
  }();
  return dir;
}

std::string last_checkpoint(const std::string& dir) {
  std::string best;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".grailck") best = std::max(best, e.path().string());
  }
  return best;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train writes the run directory") {
  const std::string d = smoke_run();
  CHECK(std::filesystem::exists(d + "/config.snapshot"));
  const std::string metrics = read_text(d + "/metrics.ndjson");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2);
  const auto first = nlohmann::json::parse(metrics.substr(0, metrics.find('\n')));
  for (const char* key : {"iteration", "step", "mean_return", "goals_per_episode", "l_ca", "l_clip", "l_vf", "entropy_pi",
                          "entropy_blend", "beta_mean", "lr", "anneal"}) {
    CHECK_MESSAGE(first.contains(key), key);
  }
  CHECK(first["beta_mean"] == 0.0);
  CHECK(!last_checkpoint(d).empty());
}

TEST_CASE("training with the same seed is reproducible") {
  const std::string d = scratch_dir("cli_smoke_again");
  const Outcome o = run({"train", "--config", cfg("ladderworld_smoke"), "--stage", "1", "--seed", "7", "--out", d, "--quiet"});
  REQUIRE(o.code == 0);
  CHECK(read_text(d + "/metrics.ndjson") == read_text(smoke_run() + "/metrics.ndjson"));
  CHECK(o.summary["status"] == "ok");
}

TEST_CASE("snapshots reproduce the run") {
  const std::string d = scratch_dir("cli_snapshot");
  const Outcome o = run({"train", "--config", smoke_run() + "/config.snapshot", "--stage", "1", "--seed", "7", "--out", d,
                         "--quiet"});
  REQUIRE(o.code == 0);
  CHECK(read_text(d + "/metrics.ndjson") == read_text(smoke_run() + "/metrics.ndjson"));
}

TEST_CASE("stage 2 needs a compatible checkpoint") {
  const std::string d = scratch_dir("cli_stage2");
  CHECK(run({"train", "--config", cfg("ladderworld_smoke"), "--stage", "2", "--out", d}).code == 2);
  const Outcome bad = run({"train", "--config", cfg("slalomworld_claude"), "--stage", "2", "--from-checkpoint",
                           last_checkpoint(smoke_run()), "--out", d, "--max-iterations", "1"});
  CHECK(bad.code == 3);
  CHECK(bad.summary["status"] == "error");
  const Outcome ok = run({"train", "--config", cfg("ladderworld_smoke"), "--stage", "2", "--from-checkpoint",
                          last_checkpoint(smoke_run()), "--out", d, "--max-iterations", "1", "--quiet"});
  CHECK(ok.code == 0);
}

TEST_CASE("config errors name the key") {
  const std::string d = scratch_dir("cli_badcfg");
  std::string text = "# base_dir: " + data_dir() + "/configs\n" + read_text(cfg("ladderworld_smoke"));
  text.replace(text.find("[train]"), 7, "[train]\nwarp_factor = 9");
  {
    std::ofstream f(d + "/bad.ini");
    f << text;
  }
  const Outcome o = run({"train", "--config", d + "/bad.ini", "--stage", "1", "--out", d + "/run"});
  CHECK(o.code == 2);
  CHECK((o.err + o.out).find("warp_factor") != std::string::npos);
}

TEST_CASE("eval") {
  const std::string ck = last_checkpoint(smoke_run());
  CHECK(run({"eval", "--checkpoint", ck, "--config", cfg("ladderworld_smoke"), "--episodes", "0"}).code == 2);
  CHECK(run({"eval", "--checkpoint", ck, "--config", cfg("slalomworld_claude"), "--episodes", "2"}).code == 3);
  const std::vector<std::string> args = {"eval", "--checkpoint", ck, "--config", cfg("ladderworld_smoke"),
                                         "--episodes", "3", "--stage", "1", "--seed", "4"};
  const Outcome a = run(args);
  const Outcome b = run(args);
  REQUIRE(a.code == 0);
  CHECK(a.summary["episodes"] == 3);
  CHECK(a.summary.contains("goals_per_episode"));
  CHECK(a.out == b.out);
  CHECK(run({"eval", "--checkpoint", ck, "--config", cfg("ladderworld_smoke"), "--mode", "argmax"}).code == 2);
}

TEST_CASE("heatmap") {
  const std::string d = scratch_dir("cli_heatmap");
  {
    std::ofstream f(d + "/p.proxy");
    f << "sigmoid(-12*dx)\n";
  }
  const Outcome o = run({"heatmap", "--proxy", d + "/p.proxy", "--mode", "offset", "--resolution", "3", "--out", d + "/h.csv"});
  REQUIRE(o.code == 0);
  const std::string csv = read_text(d + "/h.csv");
  const std::string row = "0.997527377,0.5,0.00247262316\n";
  CHECK(csv.find(row + row + row) != std::string::npos);

  CHECK(run({"heatmap", "--proxy", d + "/p.proxy", "--mode", "scene", "--out", d + "/s.csv"}).code == 2);
  CHECK(run({"heatmap", "--out", d + "/s.csv"}).code == 2);
  CHECK(run({"heatmap", "--proxy", d + "/p.proxy", "--mode", "scene", "--scene-fixture",
             data_dir() + "/scenes/ladderworld_floor0.scene", "--anchor", "2", "--resolution", "8", "--out", d + "/s.ppm"})
            .code == 0);
  CHECK(read_text(d + "/s.ppm").rfind("P5\n8 8\n255\n", 0) == 0);

  // Fresh agent: every valuation net outputs one half.
  const RunConfig rc = load_run_config(cfg("ladderworld_smoke"));
  auto agent = rc.make_agent(rc.full);
  agent->init(1);
  save_checkpoint(d + "/fresh.grailck", *agent, "ladderworld", 0);
  REQUIRE(run({"heatmap", "--checkpoint", d + "/fresh.grailck", "--predicate", "on_ladder", "--resolution", "4", "--out",
               d + "/z.csv"})
              .code == 0);
  const std::string z = read_text(d + "/z.csv");
  CHECK(z.find("0.5,0.5,0.5,0.5\n0.5,0.5,0.5,0.5\n0.5,0.5,0.5,0.5\n0.5,0.5,0.5,0.5\n") != std::string::npos);
  const Outcome unknown = run({"heatmap", "--checkpoint", d + "/fresh.grailck", "--predicate", "under_ladder", "--out",
                               d + "/u.csv"});
  CHECK(unknown.code == 2);
  CHECK((unknown.err + unknown.out).find("left_of_ladder") != std::string::npos);
  CHECK(run({"heatmap", "--checkpoint", d + "/fresh.grailck", "--proxy", d + "/p.proxy", "--predicate", "on_ladder",
             "--out", d + "/b.csv"})
            .code == 2);
}

TEST_CASE("check") {
  for (const std::string env : {"ladderworld", "diverworld", "slalomworld"}) {
    for (const std::string kind : {"policy", "blend"}) {
      const Outcome o = run({"check", "--program", data_dir() + "/programs/" + env + "." + kind + ".pl", "--decls",
                             data_dir() + "/decls/" + env + ".decls"});
      CHECK_MESSAGE(o.code == 0, env << " " << kind << " " << o.err);
    }
  }
  const std::string d = scratch_dir("cli_check");
  {
    std::ofstream f(d + "/bad.pl");
    f << "up_ladder(X) :- hovering(P,L).\n";
  }
  const Outcome bad = run({"check", "--program", d + "/bad.pl", "--decls", data_dir() + "/decls/ladderworld.decls"});
  CHECK(bad.code == 1);
  CHECK((bad.out + bad.err).find("hovering") != std::string::npos);
  CHECK(run({"check", "--proxy", data_dir() + "/proxies/ladderworld/claude/on_ladder.proxy"}).code == 0);
  {
    std::ofstream f(d + "/bad.proxy");
    f << "sigmoid(dx *)\n";
  }
  CHECK(run({"check", "--proxy", d + "/bad.proxy"}).code == 1);
  const Outcome g = run({"check", "--gradcheck", "--instances", "1"});
  CHECK(g.code == 0);
  CHECK(g.summary["status"] == "ok");
  CHECK(run({"check"}).code == 2);
}

TEST_CASE("usage") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--stage", "3"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
}

}  // TEST_SUITE
