#pragma once

// Run configuration: an INI document with [env], [programs], [proxies],
// [train] and [agent] sections.  Relative paths resolve against the
// directory of the config file.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "grail/agent.hpp"
#include "grail/envs.hpp"
#include "grail/logic.hpp"
#include "grail/ppo.hpp"
#include "grail/proxy.hpp"

namespace grail {

struct RunConfig {
  std::string path;
  /// Directory relative paths resolve against.
  std::string base_dir;
  /// Config text exactly as read.
  std::string text;

  std::string env_name;
  EnvSpec simplified;
  EnvSpec full;
  logic::Decls decls;
  std::string policy_source;
  std::string blending_source;
  std::map<std::string, ProxyFn> proxies;
  std::vector<std::string> aligned;
  TrainConfig train;
  BlendMode blend_mode = BlendMode::kLogic;
  int hidden = 64;

  /// Fixture for the stage: simplified for 1, full for 2.
  const EnvSpec& env_for_stage(int stage) const { return stage == 1 ? simplified : full; }
  /// Agent layout for the given env fixture.
  AgentLayout layout(const EnvSpec& env) const;
  std::unique_ptr<HybridAgent> make_agent(const EnvSpec& env) const;
};

/// `base_dir` is used for relative paths; a leading `# base_dir: <dir>`
/// comment in the text overrides it (written into run snapshots).
RunConfig parse_run_config(const std::string& text, const std::string& base_dir, const std::string& origin);
RunConfig load_run_config(const std::string& path);

/// Loads every `<predicate>.proxy` under `dir` for the given predicates.
/// Throws MissingProxy naming the first predicate without a file.
std::map<std::string, ProxyFn> load_proxy_dir(const std::string& dir, const std::vector<std::string>& predicates);

/// Snapshot text: provenance comments followed by the verbatim config.
std::string snapshot_text(const RunConfig& cfg, int stage, std::uint64_t seed);

}  // namespace grail
