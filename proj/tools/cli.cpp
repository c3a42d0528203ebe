#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "grail/checkpoint.hpp"
#include "grail/concepts.hpp"
#include "grail/gradcheck.hpp"
#include "grail/logic.hpp"
#include "grail/ppo.hpp"
#include "grail/proxy.hpp"
#include "grail/run_config.hpp"
#include "grail/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace grail::cli {

namespace {

// Raised inside a command to exit with a specific code.
struct Exit {
  int code;
  std::string message;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Exit{kUsage, "cannot read " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig config_or_exit(const std::string& path) {
  try {
    return load_run_config(path);
  } catch (const IncompatibleArtifact&) {
    throw;
  } catch (const Error& e) {
    throw Exit{kUsage, std::string("config: ") + e.what()};
  }
}

struct TrainArgs {
  std::string config;
  int stage = 1;
  std::uint64_t seed = 0;
  std::string from_checkpoint;
  std::string out;
  long long max_iterations = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_or_exit(a.config);
  if (a.stage == 2 && a.from_checkpoint.empty())
    throw Exit{kUsage, "stage 2 requires --from-checkpoint"};
  TrainOptions opt;
  opt.stage = a.stage;
  opt.seed = a.seed;
  opt.from_checkpoint = a.from_checkpoint;
  opt.out_dir = a.out;
  opt.max_iterations = a.max_iterations;
  TrainResult r;
  try {
    r = train(cfg, opt, a.quiet ? nullptr : &err);
  } catch (const ConfigError& e) {
    throw Exit{kUsage, e.what()};
  }
  ordered_json j;
  j["command"] = "train";
  j["status"] = "ok";
  j["stage"] = a.stage;
  j["seed"] = a.seed;
  j["iterations"] = r.iterations;
  j["steps"] = r.steps;
  j["episodes"] = r.episodes;
  j["checkpoint"] = r.final_checkpoint;
  j["out"] = a.out;
  out << j.dump() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  int episodes = 100;
  std::string mode = "sampled";
  std::uint64_t seed = 0;
  int stage = 2;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.episodes < 1) throw Exit{kUsage, "--episodes must be at least 1"};
  const RunConfig cfg = config_or_exit(a.config);
  auto agent = cfg.make_agent(cfg.full);
  const CheckpointManifest m = load_checkpoint(a.checkpoint, *agent);
  if (m.env != cfg.env_name)
    throw IncompatibleArtifact("checkpoint is for env '" + m.env + "', config is for '" + cfg.env_name + "'");
  agent->force_beta_zero = a.stage == 1;
  const TrainConfig& tc = cfg.train;
  EvalConfig ec;
  ec.episodes = a.episodes;
  ec.seed = a.seed;
  ec.greedy = a.mode == "greedy";
  ec.action_repeat = a.stage == 1 ? tc.action_repeat_stage1 : tc.action_repeat_stage2;
  ec.episode_cap = a.stage == 1 ? tc.episode_cap_stage1 : 0;
  const EvalResult r = evaluate(*agent, cfg.env_for_stage(a.stage), ec);
  ordered_json j;
  j["command"] = "eval";
  j["status"] = "ok";
  j["env"] = cfg.env_name;
  j["stage"] = a.stage;
  j["mode"] = a.mode;
  j["episodes"] = r.episodes;
  j["mean_return"] = r.mean_return;
  j["std_return"] = r.std_return;
  j["goals_per_episode"] = r.goals_per_episode;
  j["completion_rate"] = r.completion_rate;
  out << j.dump() << "\n";
  return kOk;
}

struct HeatmapArgs {
  std::string checkpoint;
  std::string proxy;
  std::string predicate;
  std::string mode = "offset";
  std::string scene_fixture;
  int anchor = -1;
  int resolution = 64;
  std::string out;
};

int cmd_heatmap(const HeatmapArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.proxy.empty()) throw Exit{kUsage, "give exactly one of --checkpoint or --proxy"};
  if (a.resolution < 1) throw Exit{kUsage, "--resolution must be positive"};
  const std::string ext = fs::path(a.out).extension().string();
  if (ext != ".csv" && ext != ".ppm") throw Exit{kUsage, "--out must end in .csv or .ppm"};

  OffsetFn f;
  std::string predicate = a.predicate;
  ProxyFn proxy;
  ValuationNet net;
  if (!a.proxy.empty()) {
    try {
      proxy = load_proxy(a.proxy);
    } catch (const Error& e) {
      throw Exit{kUsage, e.what()};
    }
    if (predicate.empty()) predicate = proxy.predicate();
    f = [&proxy](double dx, double dy) { return proxy(dx, dy); };
  } else {
    if (predicate.empty()) throw Exit{kUsage, "--predicate is required with --checkpoint"};
    const CheckpointManifest m = read_manifest(a.checkpoint);
    if (std::find(m.predicates.begin(), m.predicates.end(), predicate) == m.predicates.end()) {
      std::string known;
      for (const std::string& p : m.predicates) known += (known.empty() ? "" : ", ") + p;
      throw Exit{kUsage, "checkpoint has no valuation for '" + predicate + "' (available: " + known + ")"};
    }
    net = load_valuation(a.checkpoint, predicate);
    f = [&net](double dx, double dy) { return net.eval(dx, dy); };
  }

  Heatmap h;
  if (a.mode == "offset") {
    h = heatmap_offset(f, predicate, a.resolution);
  } else {
    if (a.scene_fixture.empty()) throw Exit{kUsage, "--mode scene needs --scene-fixture"};
    Scene scene;
    try {
      scene = parse_scene(slurp(a.scene_fixture));
    } catch (const Error& e) {
      throw Exit{kUsage, e.what()};
    }
    if (a.anchor < 0 || a.anchor >= static_cast<int>(scene.objects.size()))
      throw Exit{kUsage, "--anchor must index an object of the scene (0.." +
                             std::to_string(static_cast<int>(scene.objects.size()) - 1) + ")"};
    h = heatmap_scene(f, predicate, scene, a.anchor, a.resolution);
  }
  if (ext == ".csv") write_heatmap_csv(h, a.out);
  else write_heatmap_ppm(h, a.out);

  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  ordered_json j;
  j["command"] = "heatmap";
  j["status"] = "ok";
  j["predicate"] = predicate;
  j["mode"] = h.mode;
  j["rows"] = h.rows;
  j["cols"] = h.cols;
  j["min"] = *lo;
  j["max"] = *hi;
  j["mean"] = std::accumulate(h.values.begin(), h.values.end(), 0.0) / static_cast<double>(h.values.size());
  j["out"] = a.out;
  out << j.dump() << "\n";
  return kOk;
}

struct CheckArgs {
  std::string program;
  std::string decls;
  std::string proxy;
  bool gradcheck = false;
  int instances = 20;
  std::uint64_t seed = 0;
};

int cmd_check(const CheckArgs& a, std::ostream& out) {
  const int modes = (!a.program.empty() ? 1 : 0) + (!a.proxy.empty() ? 1 : 0) + (a.gradcheck ? 1 : 0);
  if (modes != 1) throw Exit{kUsage, "give exactly one of --program (with --decls), --proxy, --gradcheck"};
  ordered_json j;
  j["command"] = "check";
  int code = kOk;
  if (!a.program.empty()) {
    if (a.decls.empty()) throw Exit{kUsage, "--program needs --decls"};
    j["kind"] = "program";
    try {
      const logic::Decls decls = logic::parse_decls(slurp(a.decls));
      const logic::LogicProgram prog = logic::parse_program(slurp(a.program), decls);
      out << logic::pretty_print(prog);
      j["clauses"] = prog.clauses.size();
    } catch (const Error& e) {
      out << "error: " << e.what() << "\n";
      j["error"] = e.what();
      code = kCheckFailed;
    }
  } else if (!a.proxy.empty()) {
    j["kind"] = "proxy";
    try {
      const ProxyFn p = load_proxy(a.proxy);
      // Probe the whole offset square for non-finite raw values.
      int nonfinite = 0;
      for (int r = 0; r <= 20; ++r)
        for (int c = 0; c <= 20; ++c)
          if (!std::isfinite(p.raw(-1.0 + 0.1 * c, -1.0 + 0.1 * r))) ++nonfinite;
      out << p.predicate() << ": " << p.node_count() << " nodes\n";
      j["predicate"] = p.predicate();
      j["nodes"] = p.node_count();
      j["nonfinite_samples"] = nonfinite;
      if (nonfinite > 0) code = kCheckFailed;
    } catch (const Error& e) {
      out << "error: " << e.what() << "\n";
      j["error"] = e.what();
      code = kCheckFailed;
    }
  } else {
    j["kind"] = "gradcheck";
    const GradcheckReport rep = run_gradcheck(a.instances, a.seed);
    for (const auto& item : rep.items) {
      out << (item.passed ? "PASS " : "FAIL ") << item.target << " instances=" << item.instances
          << " entries=" << item.stats.entries << " max_rel_error=" << item.stats.max_error;
      if (!item.passed) out << " worst: " << item.stats.worst;
      out << "\n";
    }
    j["max_rel_error"] = rep.max_error;
    j["tolerance"] = kGradTolerance;
    if (!rep.passed) code = kCheckFailed;
  }
  j["status"] = code == kOk ? "ok" : "failed";
  out << j.dump() << "\n";
  return code;
}

void summary_error(std::ostream& out, const std::string& command, int code, const std::string& msg) {
  ordered_json j;
  j["command"] = command;
  j["status"] = "error";
  j["exit_code"] = code;
  j["error"] = msg;
  out << j.dump() << "\n";
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"GRAIL: hybrid logic/neural agents with concept-aligned valuations"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--config", ta.config, "Run config (INI)")->required();
  train_cmd->add_option("--stage", ta.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train_cmd->add_option("--seed", ta.seed, "Base seed");
  train_cmd->add_option("--from-checkpoint", ta.from_checkpoint, "Stage-1 checkpoint (required for stage 2)");
  train_cmd->add_option("--out", ta.out, "Run directory")->required();
  train_cmd->add_option("--max-iterations", ta.max_iterations, "Stop early after N iterations");
  train_cmd->add_flag("--quiet", ta.quiet, "No per-iteration progress on stderr");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required();
  eval_cmd->add_option("--config", ea.config)->required();
  eval_cmd->add_option("--episodes", ea.episodes);
  eval_cmd->add_option("--mode", ea.mode)->check(CLI::IsMember({"sampled", "greedy"}));
  eval_cmd->add_option("--seed", ea.seed);
  eval_cmd->add_option("--stage", ea.stage, "Stage setup to evaluate under (env variant, repeat, cap)")
      ->check(CLI::IsMember({1, 2}));

  HeatmapArgs ha;
  auto* heat_cmd = app.add_subcommand("heatmap", "Render a valuation or proxy heatmap");
  heat_cmd->add_option("--checkpoint", ha.checkpoint);
  heat_cmd->add_option("--proxy", ha.proxy);
  heat_cmd->add_option("--predicate", ha.predicate);
  heat_cmd->add_option("--mode", ha.mode)->check(CLI::IsMember({"offset", "scene"}));
  heat_cmd->add_option("--scene-fixture", ha.scene_fixture);
  heat_cmd->add_option("--anchor", ha.anchor);
  heat_cmd->add_option("--resolution", ha.resolution);
  heat_cmd->add_option("--out", ha.out)->required();

  CheckArgs ca;
  auto* check_cmd = app.add_subcommand("check", "Validate programs or proxies, or run the gradient suite");
  check_cmd->add_option("--program", ca.program);
  check_cmd->add_option("--decls", ca.decls);
  check_cmd->add_option("--proxy", ca.proxy);
  check_cmd->add_flag("--gradcheck", ca.gradcheck);
  check_cmd->add_option("--instances", ca.instances, "Random instances per gradcheck target");
  check_cmd->add_option("--seed", ca.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    summary_error(out, "usage", kUsage, e.what());
    return kUsage;
  }

  std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*train_cmd) return cmd_train(ta, out, err);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*heat_cmd) return cmd_heatmap(ha, out);
    return cmd_check(ca, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << "\n";
    summary_error(out, name, e.code, e.message);
    return e.code;
  } catch (const IncompatibleArtifact& e) {
    err << "error: " << e.what() << "\n";
    summary_error(out, name, kIncompatible, e.what());
    return kIncompatible;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    summary_error(out, name, kUsage, e.what());
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    summary_error(out, name, kCheckFailed, e.what());
    return kCheckFailed;
  }
}

}  // namespace grail::cli
