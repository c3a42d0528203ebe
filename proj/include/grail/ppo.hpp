#pragma once

// PPO building blocks: configuration, rollout storage, GAE, the clipped
// surrogate, the blended loss with concept alignment, and evaluation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grail/agent.hpp"
#include "grail/concepts.hpp"
#include "grail/envs.hpp"

namespace grail {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.1;
  double c_vf = 0.5;
  double c_ae = 0.01;
  double c_be = 0.01;
  double c_ca = 0.3;
  double gamma_ca = 1.0;
  int K = 49;
  int rollout_len = 128;
  int n_envs = 8;
  int epochs = 10;
  int minibatches = 4;
  double lr = 2.5e-4;
  bool lr_decay = true;
  double grad_clip = 0.5;
  long long total_steps = 200000;
  int stage = 1;
  std::uint64_t seed = 0;
  /// Base environment steps per agent decision, per stage.
  int action_repeat_stage1 = 4;
  int action_repeat_stage2 = 1;
  /// Episode cap in base steps for stage 1 (0 keeps the fixture's cap).
  int episode_cap_stage1 = 3000;
  /// Stage 2 only: whether policy clause weights are optimized.
  bool train_rule_weights = true;
  /// Checkpoint every N iterations (0: final checkpoint only).
  int checkpoint_every = 0;
  int eval_episodes = 100;
  bool eval_greedy = false;

  int action_repeat() const { return stage == 1 ? action_repeat_stage1 : action_repeat_stage2; }
  int batch_size() const { return rollout_len * n_envs; }
  int minibatch_size() const { return batch_size() / minibatches; }
  long long iterations() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Parameter groups optimized in the configured stage.
  Trainable trainable() const;
};

/// Transitions stored at [t * n_envs + e].
struct RolloutBuffer {
  int rollout_len = 0;
  int n_envs = 0;
  std::vector<Scene> scenes;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<double> values;
  std::vector<double> betas;
  /// Value of each env's state after the last step (zero where done).
  std::vector<double> bootstrap;

  void reset(int len, int envs);
  std::size_t size() const { return actions.size(); }
  std::size_t at(int t, int e) const { return static_cast<std::size_t>(t) * static_cast<std::size_t>(n_envs) + static_cast<std::size_t>(e); }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Backward recursion with done masking; layout as in RolloutBuffer.
GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
              const std::vector<std::uint8_t>& dones, const std::vector<double>& bootstrap, int rollout_len,
              int n_envs, double gamma, double lambda);
GaeResult gae(const RolloutBuffer& buf, double gamma, double lambda);

/// Per-minibatch normalization to mean 0, std 1 (std floored at 1e-8).
std::vector<double> normalize_advantages(const std::vector<double>& adv);

/// min(r A, clip(r, 1-eps, 1+eps) A) for scalars.
double clipped_objective(double ratio, double advantage, double eps);

struct Minibatch {
  std::vector<Scene> scenes;
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  /// Already normalized.
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct CoreLoss {
  ad::Var l_clip;
  ad::Var l_vf;
  ad::Var entropy_pi;
  ad::Var entropy_blend;
  ad::Var beta_mean;
};

/// Forward pass of the agent on the minibatch and the PPO terms.
CoreLoss ppo_core_loss(ad::Tape& tape, const Minibatch& batch, HybridAgent& agent, const TrainConfig& cfg,
                       const Trainable& trainable);

struct LossTerms {
  ad::Var total;
  CoreLoss core;
  double l_ca = 0.0;
  double anneal = 1.0;
};

/// c_VF L^VF - L^CLIP - c_AE H(pi) - c_BE H(beta) + (1 - gamma_CA t/T) c_CA L^CA.
/// The alignment term is added when c_CA > 0 and `aligner` is given; when
/// `ca_trainable` is false its value is a constant.
LossTerms total_loss(ad::Tape& tape, const Minibatch& batch, HybridAgent& agent, const TrainConfig& cfg,
                     const Trainable& trainable, const ConceptAligner* aligner, long long t, long long T);

struct EvalConfig {
  int episodes = 100;
  std::uint64_t seed = 0;
  bool greedy = false;
  int action_repeat = 1;
  /// 0 keeps the fixture's cap.
  int episode_cap = 0;
  /// Episodes run side by side.
  int parallel = 16;
};

struct EvalResult {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double goals_per_episode = 0.0;
  /// Fraction of episodes with at least one goal.
  double completion_rate = 0.0;
  std::vector<double> returns;
  std::vector<int> goals;
};

EvalResult evaluate(HybridAgent& agent, const EnvSpec& spec, const EvalConfig& cfg);

/// Samples an index from a probability row with a uniform draw u in [0,1).
int sample_index(const double* probs, int n, double u);

/// Worker count from GRAIL_THREADS (default 1).
int worker_threads();

}  // namespace grail
