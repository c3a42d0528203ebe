#include "grail/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "grail/agent.hpp"
#include "grail/concepts.hpp"
#include "grail/envs.hpp"
#include "grail/ppo.hpp"
#include "grail/proxy.hpp"

namespace grail {

namespace {

// Small self-contained ladderworld setup so the suite needs no data files.
constexpr const char* kDecls = R"(
action up_ladder(world)
action right_ladder(world)
action left_ladder(world)
blend neural_agent(world)
blend logic_agent(world)
spatial on_ladder(agent, ladder)
spatial same_level_ladder(agent, ladder)
spatial left_of_ladder(agent, ladder)
spatial right_of_ladder(agent, ladder)
spatial close_by_monkey(agent, monkey)
spatial close_by_throwncoconut(agent, throwncoconut)
status nothing_around(world)
)";

constexpr const char* kPolicy = R"(
up_ladder(X) :- on_ladder(P,L), same_level_ladder(P,L).
right_ladder(X) :- left_of_ladder(P,L), same_level_ladder(P,L).
left_ladder(X) :- right_of_ladder(P,L), same_level_ladder(P,L).
)";

constexpr const char* kBlending = R"(
neural_agent(X) :- close_by_monkey(P,M).
neural_agent(X) :- close_by_throwncoconut(P,TC).
logic_agent(X) :- nothing_around(X).
)";

const std::map<std::string, std::string>& proxy_sources() {
  static const std::map<std::string, std::string> src = {
      {"on_ladder", "gauss(dx, 0.05) * gauss(dy + 0.1, 0.1)"},
      {"same_level_ladder", "sigmoid(40*(dy+0.26)) * sigmoid(-40*(dy-0.02))"},
      {"left_of_ladder", "sigmoid(-12*dx)"},
      {"right_of_ladder", "sigmoid(12*dx)"},
      {"close_by_monkey", "sigmoid(20*(0.2 - abs(dx) - abs(dy)))"},
      {"close_by_throwncoconut", "sigmoid(20*(0.2 - abs(dx) - abs(dy)))"},
  };
  return src;
}

ad::Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  ad::Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(lo, hi);
  return m;
}

double normal(Rng& rng) {
  const double u1 = std::max(rng.uniform(), 1e-12);
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::vector<Scene> random_scenes(Rng& rng, int count) {
  EnvSpec spec;
  spec.name = "ladderworld";
  spec.variant = "full";
  spec.episode_cap = 100000;
  auto env = make_env(spec);
  env->reset(rng.bits());
  std::vector<Scene> out;
  while (static_cast<int>(out.size()) < count) {
    const int burn = static_cast<int>(rng.below(40));
    for (int k = 0; k < burn; ++k) {
      StepResult r = env->step(static_cast<int>(rng.below(3)));
      if (r.done) env->reset(rng.bits());
    }
    out.push_back(env->scene());
  }
  return out;
}

std::unique_ptr<HybridAgent> random_agent(Rng& rng, BlendMode mode) {
  AgentLayout l;
  l.decls = logic::parse_decls(kDecls);
  l.policy = compile_policy(logic::parse_program(kPolicy, l.decls));
  l.blending = compile_blending(logic::parse_program(kBlending, l.decls));
  l.blend_mode = mode;
  l.object_types = {"agent", "child", "ladder", "monkey", "throwncoconut"};
  l.max_objects = 7;
  l.hidden = 12;
  auto agent = std::make_unique<HybridAgent>(std::move(l), status_registry("ladderworld"));
  agent->init(rng.bits());
  // Move every group away from its symmetric initialization.
  for (nn::Mlp* m : {&agent->theta(), &agent->blender_net(), &agent->critic_neu(), &agent->critic_log()}) {
    m->init(rng, false);
  }
  for (auto& [name, net] : agent->psi()) net.mlp().init(rng, false);
  agent->phi().value = random_matrix(rng, agent->phi().value.rows(), agent->phi().value.cols(), -1.5, 1.5);
  agent->blend_weights().value =
      random_matrix(rng, agent->blend_weights().value.rows(), agent->blend_weights().value.cols(), -1.5, 1.5);
  return agent;
}

void zero_all(const std::vector<ad::Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace

double gradient_error(double a, double f) {
  const double scale = std::max({std::fabs(a), std::fabs(f), 1e-2});
  return std::fabs(a - f) / scale;
}

GradcheckStats check_gradients(const std::function<ad::Var(ad::Tape&)>& loss,
                               const std::vector<ad::Parameter*>& params, Rng& rng, int max_entries, double h) {
  GradcheckStats stats;
  ad::BranchLog log(ad::BranchLog::Mode::kRecord);
  zero_all(params);
  {
    ad::BranchScope scope(log);
    ad::Tape tape;
    ad::Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<ad::Matrix> grads;
  for (auto* p : params) grads.push_back(p->grad);

  auto eval = [&]() {
    log.set_mode(ad::BranchLog::Mode::kReplay);
    ad::BranchScope scope(log);
    ad::Tape tape;
    return loss(tape).item();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ad::Parameter* p = params[pi];
    const auto n = static_cast<int>(p->value.size());
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n > max_entries) {
      for (int i = 0; i < max_entries; ++i)
        std::swap(idx[static_cast<std::size_t>(i)],
                  idx[static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(n - i))]);
      idx.resize(static_cast<std::size_t>(max_entries));
    }
    for (int k : idx) {
      double& x = p->value.data()[k];
      const double x0 = x;
      x = x0 + h;
      const double up = eval();
      x = x0 - h;
      const double down = eval();
      x = x0;
      const double fd = (up - down) / (2.0 * h);
      const double err = gradient_error(grads[pi].data()[k], fd);
      ++stats.entries;
      if (err > stats.max_error || !std::isfinite(err)) {
        stats.max_error = std::isfinite(err) ? err : INFINITY;
        stats.worst = p->name + "[" + std::to_string(k) + "] autodiff=" + std::to_string(grads[pi].data()[k]) +
                      " fd=" + std::to_string(fd);
      }
    }
  }
  zero_all(params);
  return stats;
}

std::vector<std::string> gradcheck_targets() { return {"valuation", "policy", "critics", "blender", "total_loss"}; }

GradcheckItem gradcheck_target(const std::string& target, int instances, std::uint64_t seed, double h) {
  GradcheckItem item;
  item.target = target;
  item.instances = instances;
  auto merge = [&](const GradcheckStats& s) {
    item.stats.entries += s.entries;
    if (s.max_error >= item.stats.max_error) {
      item.stats.max_error = s.max_error;
      item.stats.worst = s.worst;
    }
  };
  const auto targets = gradcheck_targets();
  const auto tid = static_cast<std::uint64_t>(std::find(targets.begin(), targets.end(), target) - targets.begin());
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(mix_seed(mix_seed(seed, tid), static_cast<std::uint64_t>(inst)));
    if (target == "valuation") {
      ValuationNet net("probe");
      net.mlp().init(rng, false);
      const ad::Matrix offsets = random_matrix(rng, 16, 2, -1.0, 1.0);
      const ad::Matrix targets = random_matrix(rng, 16, 1, 0.0, 1.0);
      auto loss = [&](ad::Tape& tape) {
        ad::Var y = net.forward(tape, tape.constant(offsets), true);
        ad::Var t = tape.constant(targets);
        ad::Var bce = ad::add(ad::mul(t, ad::safe_log(y)), ad::mul(ad::one_minus(t), ad::safe_log(ad::one_minus(y))));
        return ad::neg(ad::mean(bce));
      };
      merge(check_gradients(loss, net.parameters(), rng, 48, h));
      continue;
    }

    const BlendMode mode = inst % 2 == 0 ? BlendMode::kNeural : BlendMode::kLogic;
    auto agent = random_agent(rng, mode);
    const std::vector<Scene> scenes = random_scenes(rng, 6);
    const int A = agent->num_actions();

    if (target == "policy") {
      Trainable tr;
      tr.theta = true;
      tr.phi = true;
      tr.psi = true;
      const ad::Matrix c = random_matrix(rng, 6, A, -1.0, 1.0);
      auto loss = [&](ad::Tape& tape) {
        AgentOutput out = agent->forward(tape, scenes, tr);
        return ad::add(ad::sum(ad::mul(out.pi, tape.constant(c))), ad::mean(policy_entropy(out.pi)));
      };
      merge(check_gradients(loss, agent->parameters(tr), rng, 48, h));
    } else if (target == "critics") {
      Trainable tr;
      tr.v_neu = true;
      tr.v_log = true;
      const ad::Matrix r = random_matrix(rng, 6, 1, -3.0, 3.0);
      auto loss = [&](ad::Tape& tape) {
        AgentOutput out = agent->forward(tape, scenes, tr);
        return ad::mean(ad::square(ad::sub(out.value, tape.constant(r))));
      };
      merge(check_gradients(loss, agent->parameters(tr), rng, 48, h));
    } else if (target == "blender") {
      Trainable tr;
      tr.lambda = true;
      const ad::Matrix c = random_matrix(rng, 6, 1, -1.0, 1.0);
      auto loss = [&](ad::Tape& tape) {
        AgentOutput out = agent->forward(tape, scenes, tr);
        return ad::add(ad::mean(blender_entropy(out.beta)), ad::sum(ad::mul(out.beta, tape.constant(c))));
      };
      merge(check_gradients(loss, agent->parameters(tr), rng, 48, h));
    } else if (target == "total_loss") {
      const Trainable tr = Trainable::all();
      std::map<std::string, ProxyFn> proxies;
      for (const auto& [name, src] : proxy_sources()) proxies.emplace(name, parse_proxy(src));
      std::vector<std::string> aligned;
      for (const auto& [name, src] : proxy_sources()) aligned.push_back(name);
      const ConceptAligner aligner(proxies, aligned, 5);
      TrainConfig cfg;
      cfg.c_ca = 0.3;
      Minibatch batch;
      batch.scenes = scenes;
      {
        ad::Tape tape;
        AgentOutput out = agent->forward(tape, scenes, Trainable::none());
        std::vector<double> adv;
        for (int i = 0; i < 6; ++i) {
          const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(A)));
          batch.actions.push_back(a);
          batch.old_log_probs.push_back(std::log(std::max(out.pi.at(i, a), ad::kLogFloor)) + 0.2 * normal(rng));
          batch.returns.push_back(out.value.at(i) + normal(rng));
          adv.push_back(normal(rng));
        }
        batch.advantages = normalize_advantages(adv);
        agent->pinned_atom_features = agent->last_atom_features();
      }
      const long long T = 1000;
      const long long t = static_cast<long long>(rng.below(T + 1));
      auto loss = [&](ad::Tape& tape) {
        return total_loss(tape, batch, *agent, cfg, tr, &aligner, t, T).total;
      };
      merge(check_gradients(loss, agent->parameters(tr), rng, 24, h));
    } else {
      throw ConfigError("unknown gradcheck target '" + target + "'");
    }
  }
  item.passed = item.stats.max_error <= kGradTolerance;
  return item;
}

GradcheckReport run_gradcheck(int instances, std::uint64_t seed, double h) {
  GradcheckReport rep;
  rep.passed = true;
  for (const auto& t : gradcheck_targets()) {
    rep.items.push_back(gradcheck_target(t, instances, seed, h));
    rep.max_error = std::max(rep.max_error, rep.items.back().stats.max_error);
    rep.passed = rep.passed && rep.items.back().passed;
  }
  return rep;
}

}  // namespace grail
