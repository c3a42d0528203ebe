#include "grail/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "grail/concepts.hpp"
#include "grail/error.hpp"
#include "grail/kvdoc.hpp"
#include "grail/reasoner.hpp"

namespace fs = std::filesystem;

namespace grail {

namespace {

std::string read_text(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(what + ": cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string resolve(const std::string& base, const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (fs::path(base) / path).lexically_normal().string();
}

const std::map<std::string, std::vector<std::string>>& allowed_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"env", {"name", "simplified", "full", "decls"}},
      {"programs", {"policy", "blending"}},
      {"proxies", {"dir", "aligned"}},
      {"train",
       {"gamma", "gae_lambda", "clip_eps", "c_vf", "c_ae", "c_be", "c_ca", "gamma_ca", "K", "rollout_len",
        "n_envs", "epochs", "minibatches", "lr", "lr_decay", "grad_clip", "total_steps", "seed",
        "action_repeat_stage1", "action_repeat_stage2", "episode_cap_stage1", "train_rule_weights",
        "checkpoint_every", "eval_episodes", "eval_mode"}},
      {"agent", {"blend_mode", "hidden"}},
  };
  return keys;
}

int as_int(const KvDoc& doc, const std::string& key, int fallback) {
  return static_cast<int>(doc.get_int("train", key, fallback));
}

TrainConfig parse_train(const KvDoc& doc) {
  TrainConfig t;
  t.gamma = doc.get_double("train", "gamma", t.gamma);
  t.gae_lambda = doc.get_double("train", "gae_lambda", t.gae_lambda);
  t.clip_eps = doc.get_double("train", "clip_eps", t.clip_eps);
  t.c_vf = doc.get_double("train", "c_vf", t.c_vf);
  t.c_ae = doc.get_double("train", "c_ae", t.c_ae);
  t.c_be = doc.get_double("train", "c_be", t.c_be);
  t.c_ca = doc.get_double("train", "c_ca", t.c_ca);
  t.gamma_ca = doc.get_double("train", "gamma_ca", t.gamma_ca);
  t.K = as_int(doc, "K", t.K);
  t.rollout_len = as_int(doc, "rollout_len", t.rollout_len);
  t.n_envs = as_int(doc, "n_envs", t.n_envs);
  t.epochs = as_int(doc, "epochs", t.epochs);
  t.minibatches = as_int(doc, "minibatches", t.minibatches);
  t.lr = doc.get_double("train", "lr", t.lr);
  t.lr_decay = doc.get_bool("train", "lr_decay", t.lr_decay);
  t.grad_clip = doc.get_double("train", "grad_clip", t.grad_clip);
  t.total_steps = doc.get_int("train", "total_steps", t.total_steps);
  t.seed = static_cast<std::uint64_t>(doc.get_int("train", "seed", 0));
  t.action_repeat_stage1 = as_int(doc, "action_repeat_stage1", t.action_repeat_stage1);
  t.action_repeat_stage2 = as_int(doc, "action_repeat_stage2", t.action_repeat_stage2);
  t.episode_cap_stage1 = as_int(doc, "episode_cap_stage1", t.episode_cap_stage1);
  t.train_rule_weights = doc.get_bool("train", "train_rule_weights", t.train_rule_weights);
  t.checkpoint_every = as_int(doc, "checkpoint_every", t.checkpoint_every);
  t.eval_episodes = as_int(doc, "eval_episodes", t.eval_episodes);
  const std::string mode = doc.get("train", "eval_mode", "sampled");
  if (mode == "greedy") {
    t.eval_greedy = true;
  } else if (mode != "sampled") {
    throw ConfigError(doc.origin() + ": [train] eval_mode: expected sampled or greedy, got '" + mode + "'");
  }
  t.validate();
  return t;
}

std::string base_dir_override(const std::string& text) {
  static const std::string tag = "# base_dir:";
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(tag, 0) == 0) return trim(line.substr(tag.size()));
    if (!line.empty() && line[0] != '#') break;
  }
  return {};
}

}  // namespace

std::map<std::string, ProxyFn> load_proxy_dir(const std::string& dir, const std::vector<std::string>& predicates) {
  std::map<std::string, ProxyFn> out;
  for (const auto& p : predicates) {
    const fs::path file = fs::path(dir) / (p + ".proxy");
    if (!fs::exists(file)) throw MissingProxy("no proxy for predicate '" + p + "' (expected " + file.string() + ")");
    out.emplace(p, load_proxy(file.string()));
  }
  return out;
}

RunConfig parse_run_config(const std::string& text, const std::string& base_dir, const std::string& origin) {
  RunConfig cfg;
  cfg.path = origin;
  cfg.text = text;
  const std::string over = base_dir_override(text);
  cfg.base_dir = over.empty() ? base_dir : over;

  KvDoc doc = KvDoc::parse(text, origin);
  doc.check_known(allowed_keys());
  for (const char* sec : {"env", "programs", "proxies"})
    if (!doc.has_section(sec)) throw ConfigError(origin + ": missing section [" + std::string(sec) + "]");

  cfg.env_name = doc.require("env", "name");
  cfg.simplified = load_env_spec(resolve(cfg.base_dir, doc.require("env", "simplified")));
  cfg.full = load_env_spec(resolve(cfg.base_dir, doc.require("env", "full")));
  for (const EnvSpec* s : {&cfg.simplified, &cfg.full})
    if (s->name != cfg.env_name)
      throw ConfigError(origin + ": env fixture is for '" + s->name + "' but [env] name is '" + cfg.env_name + "'");
  if (cfg.simplified.full()) throw ConfigError(origin + ": [env] simplified: fixture variant is 'full'");
  if (!cfg.full.full()) throw ConfigError(origin + ": [env] full: fixture variant is not 'full'");

  const std::string decls_path = resolve(cfg.base_dir, doc.require("env", "decls"));
  cfg.decls = logic::parse_decls(read_text(decls_path, "decls"));

  cfg.policy_source = read_text(resolve(cfg.base_dir, doc.require("programs", "policy")), "policy program");
  if (doc.has("programs", "blending"))
    cfg.blending_source = read_text(resolve(cfg.base_dir, doc.require("programs", "blending")), "blending program");

  std::vector<std::string> aligned = split_list(doc.get("proxies", "aligned", ""));
  if (aligned.empty()) aligned = cfg.decls.spatial_names();
  for (const auto& a : aligned) {
    const auto* d = cfg.decls.find(a);
    if (d == nullptr || d->kind != logic::PredKind::kSpatial)
      throw ConfigError(origin + ": [proxies] aligned: '" + a + "' is not a declared spatial predicate");
  }
  cfg.aligned = aligned;
  cfg.proxies = load_proxy_dir(resolve(cfg.base_dir, doc.require("proxies", "dir")), aligned);

  cfg.train = parse_train(doc);
  cfg.blend_mode = parse_blend_mode(doc.get("agent", "blend_mode", "logic"));
  cfg.hidden = static_cast<int>(doc.get_int("agent", "hidden", 64));
  if (cfg.hidden < 1) throw ConfigError(origin + ": [agent] hidden: must be positive");

  // Parse once now so syntax errors surface at load time.
  (void)cfg.layout(cfg.full);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = read_text(path, "config");
  const std::string dir = fs::absolute(fs::path(path)).parent_path().string();
  return parse_run_config(text, dir, path);
}

AgentLayout RunConfig::layout(const EnvSpec& env) const {
  auto probe = make_env(env);
  AgentLayout l;
  l.decls = decls;
  auto policy = logic::parse_program(policy_source, decls);
  logic::check_role(policy, logic::ProgramRole::kPolicy);
  l.policy = compile_policy(std::move(policy));
  if (!blending_source.empty()) {
    auto blending = logic::parse_program(blending_source, decls);
    logic::check_role(blending, logic::ProgramRole::kBlending);
    l.blending = compile_blending(std::move(blending));
  }
  if (blend_mode == BlendMode::kLogic && !l.blending)
    throw ConfigError(path + ": blend_mode logic needs a [programs] blending program");
  l.blend_mode = blend_mode;
  l.object_types = probe->object_types();
  l.max_objects = probe->max_objects();
  l.hidden = hidden;
  const auto acts = decls.actions();
  if (acts.size() != probe->actions().size())
    throw ConfigError(path + ": decls declare " + std::to_string(acts.size()) + " actions, env '" + env.name +
                      "' has " + std::to_string(probe->actions().size()));
  for (std::size_t i = 0; i < acts.size(); ++i)
    if (acts[i] != probe->actions()[i])
      throw ConfigError(path + ": action " + std::to_string(i) + " is '" + acts[i] + "' in decls but '" +
                        probe->actions()[i] + "' in env");
  return l;
}

std::unique_ptr<HybridAgent> RunConfig::make_agent(const EnvSpec& env) const {
  return std::make_unique<HybridAgent>(layout(env), status_registry(env.name));
}

std::string snapshot_text(const RunConfig& cfg, int stage, std::uint64_t seed) {
  std::ostringstream out;
  if (base_dir_override(cfg.text).empty()) out << "# base_dir: " << cfg.base_dir << "\n";
  out << "# stage: " << stage << "\n# seed: " << seed << "\n" << cfg.text;
  return out.str();
}

}  // namespace grail
