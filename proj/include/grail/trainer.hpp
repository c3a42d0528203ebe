#pragma once

// Two-stage training driver.  Writes config.snapshot, metrics.ndjson (one
// record per PPO iteration) and ckpt_<step>.grailck files into the run dir.

#include <cstdint>
#include <iosfwd>
#include <string>

#include "grail/run_config.hpp"

namespace grail {

struct TrainOptions {
  int stage = 1;
  std::uint64_t seed = 0;
  std::string from_checkpoint;
  std::string out_dir;
  /// Stops after this many iterations when positive (testing aid).
  long long max_iterations = 0;
};

struct TrainResult {
  long long iterations = 0;
  long long steps = 0;
  long long episodes = 0;
  std::string final_checkpoint;
  double last_l_ca = 0.0;
};

/// Throws ConfigError for invalid stage setups (stage 2 without a
/// checkpoint) and IncompatibleArtifact for checkpoints that do not fit.
TrainResult train(const RunConfig& cfg, const TrainOptions& opt, std::ostream* progress = nullptr);

}  // namespace grail
