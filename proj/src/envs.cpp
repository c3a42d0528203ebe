#include "grail/envs.hpp"

#include <cmath>
#include <sstream>

#include "env_detail.hpp"
#include "grail/kvdoc.hpp"

namespace grail {

double EnvSpec::number(const std::string& key, double fallback) const {
  auto it = layout.find(key);
  if (it == layout.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (it->second.empty() || *end != '\0') throw ConfigError("layout key '" + key + "': '" + it->second + "' is not a number");
  return v;
}

std::vector<double> EnvSpec::numbers(const std::string& key, std::vector<double> fallback) const {
  auto it = layout.find(key);
  if (it == layout.end()) return fallback;
  std::vector<double> out;
  for (const std::string& s : split_list(it->second)) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ConfigError("layout key '" + key + "': '" + s + "' is not a number");
    out.push_back(v);
  }
  return out;
}

EnvSpec parse_env_spec(const std::string& text) {
  const KvDoc doc = KvDoc::parse(text, "env fixture");
  for (const std::string& s : doc.sections()) {
    if (s != "env" && s != "layout") throw ConfigError("env fixture: unknown section [" + s + "]");
  }
  doc.check_known({{"env", {"name", "variant", "episode_cap", "goal_reward"}}, {"layout", doc.keys("layout")}});
  EnvSpec spec;
  spec.name = doc.require("env", "name");
  spec.variant = doc.get("env", "variant", "simplified");
  if (spec.variant != "simplified" && spec.variant != "full") {
    throw ConfigError("env fixture: [env] variant must be simplified or full, got '" + spec.variant + "'");
  }
  spec.episode_cap = static_cast<int>(doc.get_int("env", "episode_cap", 3000));
  if (spec.episode_cap <= 0) throw ConfigError("env fixture: [env] episode_cap must be positive");
  spec.goal_reward = doc.get_double("env", "goal_reward", 20.0);
  spec.layout = doc.section("layout");
  return spec;
}

EnvSpec load_env_spec(const std::string& path) {
  const KvDoc doc = KvDoc::load(path);
  try {
    return parse_env_spec(doc.text());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void Env::check_action(int action) const {
  if (action < 0 || action >= num_actions()) {
    throw Error("action index " + std::to_string(action) + " out of range [0, " + std::to_string(num_actions()) + ")");
  }
}

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
  if (spec.name == "ladderworld") return detail::make_ladderworld(spec);
  if (spec.name == "diverworld") return detail::make_diverworld(spec);
  if (spec.name == "slalomworld") return detail::make_slalomworld(spec);
  throw ConfigError("unknown environment '" + spec.name + "'");
}

const StatusRegistry& status_registry(const std::string& env_name) {
  if (env_name == "ladderworld") return detail::ladderworld_status();
  if (env_name == "diverworld") return detail::diverworld_status();
  if (env_name == "slalomworld") return detail::slalomworld_status();
  throw ConfigError("unknown environment '" + env_name + "'");
}

std::vector<std::string> env_names() { return {"ladderworld", "diverworld", "slalomworld"}; }

StepResult step_repeated(Env& env, int action, int repeat) {
  if (repeat < 1) throw ConfigError("action repeat must be at least 1");
  StepResult total;
  for (int i = 0; i < repeat; ++i) {
    StepResult r = env.step(action);
    total.reward += r.reward;
    total.info.goal_achieved = total.info.goal_achieved || r.info.goal_achieved;
    for (auto& e : r.info.events) total.info.events.push_back(std::move(e));
    total.scene = std::move(r.scene);
    total.done = r.done;
    if (r.done) break;
  }
  return total;
}

std::string format_replay(const Replay& r) {
  std::ostringstream os;
  os << "env " << r.env_fixture << "\nseed " << r.seed << "\nrepeat " << r.action_repeat << "\nactions";
  for (int a : r.actions) os << " " << a;
  os << "\n";
  return os.str();
}

Replay parse_replay(const std::string& text) {
  Replay r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "env") ls >> r.env_fixture;
    else if (key == "seed") ls >> r.seed;
    else if (key == "repeat") ls >> r.action_repeat;
    else if (key == "actions") {
      int a = 0;
      while (ls >> a) r.actions.push_back(a);
    } else {
      throw ConfigError("replay: unknown key '" + key + "'");
    }
  }
  return r;
}

ReplayOutcome run_replay(Env& env, const Replay& r) {
  ReplayOutcome out;
  env.reset(r.seed);
  for (int a : r.actions) {
    StepResult s = step_repeated(env, a, r.action_repeat);
    out.total_reward += s.reward;
    out.rewards.push_back(s.reward);
    out.goals += s.info.goal_achieved ? 1 : 0;
    ++out.steps;
    if (s.done) {
      out.done = true;
      break;
    }
  }
  return out;
}

namespace detail {

double distance(const Object& a, const Object& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace detail

}  // namespace grail
