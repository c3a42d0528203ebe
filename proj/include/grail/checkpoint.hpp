#pragma once

// Checkpoint file: the magic line `GRAILCK1`, a text manifest terminated by
// `end`, then little-endian float32 arrays in manifest order.

#include <map>
#include <string>
#include <vector>

#include "grail/agent.hpp"

namespace grail {

struct CheckpointManifest {
  std::string env;
  std::string blend_mode;
  std::vector<std::string> actions;
  std::vector<std::string> predicates;
  int policy_clauses = 0;
  int blend_clauses = 0;
  long long step = 0;
  struct Array {
    std::string name;
    int rows = 0;
    int cols = 0;
  };
  std::vector<Array> arrays;
};

void save_checkpoint(const std::string& path, HybridAgent& agent, const std::string& env_name, long long step);
/// Reads the manifest only.
CheckpointManifest read_manifest(const std::string& path);
/// Loads every array into `agent`; throws IncompatibleArtifact on any
/// manifest or shape mismatch.  Returns the manifest.
CheckpointManifest load_checkpoint(const std::string& path, HybridAgent& agent);
/// Every array by name, without an agent to load into.
std::map<std::string, ad::Matrix> read_arrays(const std::string& path);
/// The valuation net of one spatial predicate from a checkpoint.
ValuationNet load_valuation(const std::string& path, const std::string& predicate);

}  // namespace grail
