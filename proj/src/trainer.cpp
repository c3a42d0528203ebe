#include "grail/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "grail/checkpoint.hpp"
#include "grail/error.hpp"
#include "grail/optim.hpp"
#include "grail/rng.hpp"

namespace fs = std::filesystem;

namespace grail {

namespace {

constexpr std::uint64_t kSamplingStream = 0xA11CEULL;
constexpr std::uint64_t kEpisodeStream = 0xE915ULL;

// Steps env k with actions[k] for every k, spread over `threads` workers.
// Each env is touched by exactly one worker, so results do not depend on
// the worker count.
std::vector<StepResult> step_all(std::vector<std::unique_ptr<Env>>& envs, const std::vector<int>& actions,
                                 int repeat, int threads) {
  std::vector<StepResult> out(envs.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) out[k] = step_repeated(*envs[k], actions[k], repeat);
  };
  const auto n = envs.size();
  const auto w = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
  if (w <= 1) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(work, lo, std::min(n, lo + chunk));
  for (auto& t : pool) t.join();
  return out;
}

struct Running {
  double sum = 0.0;
  int count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double mean() const { return count > 0 ? sum / count : std::nan(""); }
};

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainOptions& opt, std::ostream* progress) {
  TrainConfig tc = cfg.train;
  tc.stage = opt.stage;
  tc.seed = opt.seed;
  tc.validate();
  if (tc.stage == 2 && opt.from_checkpoint.empty())
    throw ConfigError("stage 2 requires --from-checkpoint (a stage-1 checkpoint)");
  if (opt.out_dir.empty()) throw ConfigError("train: output directory is empty");

  EnvSpec env_spec = cfg.env_for_stage(tc.stage);
  if (tc.stage == 1 && tc.episode_cap_stage1 > 0) env_spec.episode_cap = tc.episode_cap_stage1;
  const int repeat = tc.action_repeat();

  auto agent = cfg.make_agent(cfg.full);
  agent->init(tc.seed);
  if (!opt.from_checkpoint.empty()) {
    const CheckpointManifest m = load_checkpoint(opt.from_checkpoint, *agent);
    if (m.env != cfg.env_name)
      throw IncompatibleArtifact("checkpoint is for env '" + m.env + "', config is for '" + cfg.env_name + "'");
  }
  if (tc.stage == 2) {
    // Stage 2 starts the neural side and the blender from scratch.
    agent->init_theta(tc.seed);
    agent->init_lambda(tc.seed);
    agent->init_critics(tc.seed);
  }
  agent->force_beta_zero = tc.stage == 1;

  const Trainable tr = tc.trainable();
  std::vector<ad::Parameter*> params = agent->parameters(tr);
  const long long iterations = tc.iterations();
  const long long T = iterations * tc.batch_size();
  AdamConfig acfg;
  acfg.lr = tc.lr;
  acfg.clip = tc.grad_clip;
  acfg.horizon = tc.lr_decay ? iterations * tc.epochs * tc.minibatches : 0;
  Adam adam(params, acfg);

  const ConceptAligner aligner(cfg.proxies, cfg.aligned, tc.K);
  const bool apply_ca = tr.psi && tc.c_ca > 0.0;
  std::vector<ad::Parameter*> psi_params = agent->psi_parameters();

  fs::create_directories(opt.out_dir);
  {
    std::ofstream snap(fs::path(opt.out_dir) / "config.snapshot", std::ios::binary);
    snap << snapshot_text(cfg, tc.stage, tc.seed);
    if (!snap) throw Error("cannot write config.snapshot in " + opt.out_dir);
  }
  std::ofstream metrics(fs::path(opt.out_dir) / "metrics.ndjson", std::ios::binary);
  if (!metrics) throw Error("cannot write metrics.ndjson in " + opt.out_dir);

  const int threads = worker_threads();
  Rng rng(mix_seed(tc.seed, kSamplingStream));
  std::uint64_t next_episode = 0;
  auto episode_seed = [&]() { return mix_seed(mix_seed(tc.seed, kEpisodeStream), next_episode++); };

  std::vector<std::unique_ptr<Env>> envs;
  std::vector<Scene> scenes;
  std::vector<double> ep_return(static_cast<std::size_t>(tc.n_envs), 0.0);
  std::vector<int> ep_goals(static_cast<std::size_t>(tc.n_envs), 0);
  for (int e = 0; e < tc.n_envs; ++e) {
    envs.push_back(make_env(env_spec));
    scenes.push_back(envs.back()->reset(episode_seed()));
  }

  TrainResult result;
  long long step = 0;
  RolloutBuffer buf;
  const int A = agent->num_actions();
  const long long stop_after = opt.max_iterations > 0 ? std::min(opt.max_iterations, iterations) : iterations;
  std::string last_ckpt;

  for (long long it = 0; it < stop_after; ++it) {
    const double anneal = anneal_factor(std::min(step, T), T, tc.gamma_ca);
    const double lr_now = adam.current_lr();
    buf.reset(tc.rollout_len, tc.n_envs);
    Running ep_ret, ep_goal;

    for (int t = 0; t < tc.rollout_len; ++t) {
      ad::Tape tape;
      AgentOutput out = agent->forward(tape, scenes, Trainable::none());
      const ad::Matrix& pi = out.pi.value();
      std::vector<int> actions(static_cast<std::size_t>(tc.n_envs));
      for (int e = 0; e < tc.n_envs; ++e) {
        const std::size_t i = buf.at(t, e);
        const int a = sample_index(pi.row(e).data(), A, rng.uniform());
        actions[static_cast<std::size_t>(e)] = a;
        buf.scenes[i] = scenes[static_cast<std::size_t>(e)];
        buf.actions[i] = a;
        buf.log_probs[i] = std::log(std::max(pi(e, a), ad::kLogFloor));
        buf.values[i] = out.value.at(e);
        buf.betas[i] = out.beta.at(e);
      }
      std::vector<StepResult> res = step_all(envs, actions, repeat, threads);
      for (int e = 0; e < tc.n_envs; ++e) {
        const auto ue = static_cast<std::size_t>(e);
        const std::size_t i = buf.at(t, e);
        buf.rewards[i] = res[ue].reward;
        buf.dones[i] = res[ue].done ? 1 : 0;
        ep_return[ue] += res[ue].reward;
        if (res[ue].info.goal_achieved) ++ep_goals[ue];
        if (res[ue].done) {
          ep_ret.add(ep_return[ue]);
          ep_goal.add(ep_goals[ue]);
          ep_return[ue] = 0.0;
          ep_goals[ue] = 0;
          scenes[ue] = envs[ue]->reset(episode_seed());
        } else {
          scenes[ue] = std::move(res[ue].scene);
        }
      }
      step += tc.n_envs;
    }
    {
      ad::Tape tape;
      AgentOutput out = agent->forward(tape, scenes, Trainable::none());
      for (int e = 0; e < tc.n_envs; ++e) buf.bootstrap[static_cast<std::size_t>(e)] = out.value.at(e);
    }
    const GaeResult g = gae(buf, tc.gamma, tc.gae_lambda);

    Running l_clip, l_vf, h_pi, h_beta, beta_mean, l_ca;
    const int N = tc.batch_size();
    const int M = tc.minibatch_size();
    std::vector<int> order(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
    std::vector<ad::Matrix> ca_grad;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
      for (int i = N - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i) + 1))]);

      // The alignment term only depends on psi and the fixed grid, so its
      // gradient is taken once per epoch and shared by the minibatches.
      ca_grad.clear();
      if (!aligner.empty()) {
        if (apply_ca) {
          for (auto* p : psi_params) p->zero_grad();
          ad::Tape tape;
          ad::Var ca = aligner.loss(tape, agent->psi(), true);
          l_ca.add(ca.item());
          tape.backward(ad::scale(ca, anneal * tc.c_ca));
          for (auto* p : psi_params) ca_grad.push_back(p->grad);
        } else {
          l_ca.add(aligner.loss_value(agent->psi()));
        }
      }

      for (int mb = 0; mb < tc.minibatches; ++mb) {
        Minibatch batch;
        std::vector<double> adv;
        for (int k = 0; k < M; ++k) {
          const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(mb * M + k)]);
          batch.scenes.push_back(buf.scenes[i]);
          batch.actions.push_back(buf.actions[i]);
          batch.old_log_probs.push_back(buf.log_probs[i]);
          batch.returns.push_back(g.returns[i]);
          adv.push_back(g.advantages[i]);
        }
        batch.advantages = normalize_advantages(adv);
        adam.zero_grad();
        for (auto* p : psi_params) p->zero_grad();
        ad::Tape tape;
        LossTerms terms = total_loss(tape, batch, *agent, tc, tr, nullptr, std::min(step, T), T);
        l_clip.add(terms.core.l_clip.item());
        l_vf.add(terms.core.l_vf.item());
        h_pi.add(terms.core.entropy_pi.item());
        h_beta.add(terms.core.entropy_blend.item());
        beta_mean.add(terms.core.beta_mean.item());
        tape.backward(terms.total);
        for (std::size_t j = 0; j < ca_grad.size(); ++j) psi_params[j]->grad += ca_grad[j];
        adam.step();
      }
    }

    nlohmann::ordered_json rec;
    rec["iteration"] = it + 1;
    rec["step"] = step;
    rec["episodes"] = ep_ret.count;
    rec["mean_return"] = ep_ret.mean();
    rec["goals_per_episode"] = ep_goal.mean();
    rec["l_ca"] = l_ca.mean();
    rec["l_clip"] = l_clip.mean();
    rec["l_vf"] = l_vf.mean();
    rec["entropy_pi"] = h_pi.mean();
    rec["entropy_blend"] = h_beta.mean();
    rec["beta_mean"] = beta_mean.mean();
    rec["lr"] = lr_now;
    rec["anneal"] = anneal;
    metrics << rec.dump() << "\n";
    metrics.flush();

    result.iterations = it + 1;
    result.steps = step;
    result.episodes += ep_ret.count;
    result.last_l_ca = l_ca.mean();
    if (progress != nullptr)
      *progress << "iter " << it + 1 << "/" << stop_after << " step " << step << " episodes " << ep_ret.count
                << " return " << ep_ret.mean() << " l_ca " << l_ca.mean() << "\n";

    const bool last = it + 1 == stop_after;
    if (last || (tc.checkpoint_every > 0 && (it + 1) % tc.checkpoint_every == 0)) {
      last_ckpt = (fs::path(opt.out_dir) / ("ckpt_" + std::to_string(step) + ".grailck")).string();
      save_checkpoint(last_ckpt, *agent, cfg.env_name, step);
    }
  }
  result.final_checkpoint = last_ckpt;
  return result;
}

}  // namespace grail
