#include "grail/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <thread>

#include "grail/error.hpp"
#include "grail/rng.hpp"

namespace grail {

long long TrainConfig::iterations() const {
  const long long per = static_cast<long long>(batch_size());
  return per > 0 ? (total_steps + per - 1) / per : 0;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train." + field + ": " + why);
  };
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma", "must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda", "must be in [0, 1]");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail("clip_eps", "must be in (0, 1)");
  if (c_vf < 0.0) fail("c_vf", "must be non-negative");
  if (c_ae < 0.0) fail("c_ae", "must be non-negative");
  if (c_be < 0.0) fail("c_be", "must be non-negative");
  if (c_ca < 0.0) fail("c_ca", "must be non-negative");
  if (gamma_ca < 0.0 || gamma_ca > 1.0) fail("gamma_ca", "must be in [0, 1]");
  if (K < 1) fail("K", "must be at least 1");
  if (rollout_len < 1) fail("rollout_len", "must be positive");
  if (n_envs < 1) fail("n_envs", "must be positive");
  if (epochs < 1) fail("epochs", "must be positive");
  if (minibatches < 1) fail("minibatches", "must be positive");
  if (batch_size() % minibatches != 0) fail("minibatches", "must divide rollout_len * n_envs");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (!(grad_clip > 0.0)) fail("grad_clip", "must be positive");
  if (total_steps < 1) fail("total_steps", "must be positive");
  if (stage != 1 && stage != 2) fail("stage", "must be 1 or 2");
  if (action_repeat_stage1 < 1) fail("action_repeat_stage1", "must be positive");
  if (action_repeat_stage2 < 1) fail("action_repeat_stage2", "must be positive");
  if (episode_cap_stage1 < 0) fail("episode_cap_stage1", "must be non-negative");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be non-negative");
  if (eval_episodes < 0) fail("eval_episodes", "must be non-negative");
}

Trainable TrainConfig::trainable() const {
  Trainable t;
  if (stage == 1) {
    t.psi = true;
    t.v_log = true;
  } else {
    t.theta = true;
    t.lambda = true;
    t.v_neu = true;
    t.v_log = true;
    t.phi = train_rule_weights;
  }
  return t;
}

void RolloutBuffer::reset(int len, int envs) {
  rollout_len = len;
  n_envs = envs;
  const auto n = static_cast<std::size_t>(len) * static_cast<std::size_t>(envs);
  scenes.assign(n, Scene{});
  actions.assign(n, 0);
  log_probs.assign(n, 0.0);
  rewards.assign(n, 0.0);
  dones.assign(n, 0);
  values.assign(n, 0.0);
  betas.assign(n, 0.0);
  bootstrap.assign(static_cast<std::size_t>(envs), 0.0);
}

GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
              const std::vector<std::uint8_t>& dones, const std::vector<double>& bootstrap, int rollout_len,
              int n_envs, double gamma, double lambda) {
  const auto n = static_cast<std::size_t>(rollout_len) * static_cast<std::size_t>(n_envs);
  if (rewards.size() != n || values.size() != n || dones.size() != n ||
      bootstrap.size() != static_cast<std::size_t>(n_envs))
    throw ShapeError("gae: buffer sizes do not match rollout_len x n_envs");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  for (int e = 0; e < n_envs; ++e) {
    double running = 0.0;
    for (int t = rollout_len - 1; t >= 0; --t) {
      const std::size_t i = static_cast<std::size_t>(t) * n_envs + e;
      const double next_value =
          t == rollout_len - 1 ? bootstrap[e] : values[static_cast<std::size_t>(t + 1) * n_envs + e];
      const double live = dones[i] ? 0.0 : 1.0;
      const double delta = rewards[i] + gamma * next_value * live - values[i];
      running = delta + gamma * lambda * live * running;
      out.advantages[i] = running;
      out.returns[i] = running + values[i];
    }
  }
  return out;
}

GaeResult gae(const RolloutBuffer& buf, double gamma, double lambda) {
  return gae(buf.rewards, buf.values, buf.dones, buf.bootstrap, buf.rollout_len, buf.n_envs, gamma, lambda);
}

std::vector<double> normalize_advantages(const std::vector<double>& adv) {
  if (adv.empty()) return {};
  const double n = static_cast<double>(adv.size());
  const double mu = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mu) * (a - mu);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = (adv[i] - mu) / sd;
  return out;
}

double clipped_objective(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

ad::Matrix column(const std::vector<double>& v) {
  ad::Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

}  // namespace

CoreLoss ppo_core_loss(ad::Tape& tape, const Minibatch& batch, HybridAgent& agent, const TrainConfig& cfg,
                       const Trainable& trainable) {
  const std::size_t n = batch.scenes.size();
  if (n == 0 || batch.actions.size() != n || batch.old_log_probs.size() != n || batch.advantages.size() != n ||
      batch.returns.size() != n)
    throw ShapeError("ppo_core_loss: minibatch fields disagree in length");
  AgentOutput out = agent.forward(tape, batch.scenes, trainable);
  const int A = static_cast<int>(out.pi.cols());
  std::vector<int> flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.actions[i] < 0 || batch.actions[i] >= A) throw ShapeError("ppo_core_loss: action out of range");
    flat[i] = static_cast<int>(i) * A + batch.actions[i];
  }
  ad::Var logp = ad::safe_log(ad::gather(out.pi, std::move(flat)));
  ad::Var ratio = ad::exp(ad::sub(logp, tape.constant(column(batch.old_log_probs))));
  for (Eigen::Index i = 0; i < ratio.rows(); ++i)
    if (!std::isfinite(ratio.at(i)))
      throw Error("ppo: non-finite probability ratio at minibatch row " + std::to_string(i));
  ad::Var adv = tape.constant(column(batch.advantages));
  ad::Var surr = ad::minimum(ad::mul(ratio, adv),
                             ad::mul(ad::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv));
  CoreLoss core;
  core.l_clip = ad::mean(surr);
  core.l_vf = ad::mean(ad::square(ad::sub(out.value, tape.constant(column(batch.returns)))));
  core.entropy_pi = ad::mean(policy_entropy(out.pi));
  core.entropy_blend = ad::mean(blender_entropy(out.beta));
  core.beta_mean = ad::mean(out.beta);
  return core;
}

LossTerms total_loss(ad::Tape& tape, const Minibatch& batch, HybridAgent& agent, const TrainConfig& cfg,
                     const Trainable& trainable, const ConceptAligner* aligner, long long t, long long T) {
  LossTerms terms;
  terms.core = ppo_core_loss(tape, batch, agent, cfg, trainable);
  ad::Var loss = ad::scale(terms.core.l_vf, cfg.c_vf);
  loss = ad::sub(loss, terms.core.l_clip);
  loss = ad::sub(loss, ad::scale(terms.core.entropy_pi, cfg.c_ae));
  loss = ad::sub(loss, ad::scale(terms.core.entropy_blend, cfg.c_be));
  terms.anneal = anneal_factor(t, T, cfg.gamma_ca);
  if (aligner != nullptr && !aligner->empty() && cfg.c_ca > 0.0) {
    ad::Var ca = aligner->loss(tape, agent.psi(), trainable.psi);
    terms.l_ca = ca.item();
    loss = ad::add(loss, ad::scale(ca, terms.anneal * cfg.c_ca));
  }
  terms.total = loss;
  return terms;
}

int sample_index(const double* probs, int n, double u) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the cumulative sum: take the last positive entry.
  for (int i = n - 1; i >= 0; --i)
    if (probs[i] > 0.0) return i;
  return n - 1;
}

int worker_threads() {
  const char* s = std::getenv("GRAIL_THREADS");
  if (s == nullptr || *s == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0' || v < 1) return 1;
  return static_cast<int>(std::min<long>(v, 256));
}

EvalResult evaluate(HybridAgent& agent, const EnvSpec& spec, const EvalConfig& cfg) {
  if (cfg.episodes < 1) throw ConfigError("evaluate: episodes must be at least 1");
  if (cfg.action_repeat < 1) throw ConfigError("evaluate: action_repeat must be at least 1");
  EnvSpec s = spec;
  if (cfg.episode_cap > 0) s.episode_cap = cfg.episode_cap;
  EvalResult res;
  res.episodes = cfg.episodes;
  res.returns.assign(static_cast<std::size_t>(cfg.episodes), 0.0);
  res.goals.assign(static_cast<std::size_t>(cfg.episodes), 0);
  const int width = std::max(1, cfg.parallel);
  for (int start = 0; start < cfg.episodes; start += width) {
    const int count = std::min(width, cfg.episodes - start);
    std::vector<std::unique_ptr<Env>> envs;
    std::vector<Scene> scenes;
    std::vector<Rng> rngs;
    std::vector<bool> live(static_cast<std::size_t>(count), true);
    for (int k = 0; k < count; ++k) {
      envs.push_back(make_env(s));
      const std::uint64_t ep_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(start + k));
      scenes.push_back(envs.back()->reset(ep_seed));
      rngs.emplace_back(mix_seed(ep_seed, 0x5eedULL));
    }
    int remaining = count;
    while (remaining > 0) {
      std::vector<int> idx;
      std::vector<Scene> batch;
      for (int k = 0; k < count; ++k)
        if (live[static_cast<std::size_t>(k)]) {
          idx.push_back(k);
          batch.push_back(scenes[static_cast<std::size_t>(k)]);
        }
      ad::Tape tape;
      AgentOutput out = agent.forward(tape, batch, Trainable::none());
      const ad::Matrix& pi = out.pi.value();
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const int k = idx[j];
        const auto r = static_cast<Eigen::Index>(j);
        int action = 0;
        if (cfg.greedy) {
          pi.row(r).maxCoeff(&action);
        } else {
          action = sample_index(pi.row(r).data(), static_cast<int>(pi.cols()),
                                rngs[static_cast<std::size_t>(k)].uniform());
        }
        StepResult step = step_repeated(*envs[static_cast<std::size_t>(k)], action, cfg.action_repeat);
        const auto e = static_cast<std::size_t>(start + k);
        res.returns[e] += step.reward;
        if (step.info.goal_achieved) ++res.goals[e];
        scenes[static_cast<std::size_t>(k)] = std::move(step.scene);
        if (step.done) {
          live[static_cast<std::size_t>(k)] = false;
          --remaining;
        }
      }
    }
  }
  const double n = static_cast<double>(cfg.episodes);
  double sum = 0.0, goals = 0.0, completed = 0.0;
  for (int i = 0; i < cfg.episodes; ++i) {
    sum += res.returns[static_cast<std::size_t>(i)];
    goals += res.goals[static_cast<std::size_t>(i)];
    if (res.goals[static_cast<std::size_t>(i)] > 0) completed += 1.0;
  }
  res.mean_return = sum / n;
  double var = 0.0;
  for (double r : res.returns) var += (r - res.mean_return) * (r - res.mean_return);
  res.std_return = std::sqrt(var / n);
  res.goals_per_episode = goals / n;
  res.completion_rate = completed / n;
  return res;
}

}  // namespace grail
