#include "grail/agent.hpp"

#include <algorithm>
#include <cmath>

namespace grail {

BlendMode parse_blend_mode(const std::string& s) {
  if (s == "neural") return BlendMode::kNeural;
  if (s == "logic") return BlendMode::kLogic;
  throw ConfigError("blend_mode must be neural or logic, got '" + s + "'");
}

const char* blend_mode_name(BlendMode m) { return m == BlendMode::kNeural ? "neural" : "logic"; }

HybridAgent::HybridAgent(AgentLayout layout, const StatusRegistry& status)
    : layout_(std::move(layout)), status_(&status) {
  for (int idx : layout_.policy.head_order) actions_.push_back(layout_.decls.at(idx).name);
  state_preds_ = layout_.decls.state_predicates();
  if (layout_.blend_mode == BlendMode::kLogic && !layout_.blending) {
    throw ConfigError("blend_mode logic requires a blending program");
  }
  if (layout_.max_objects < 1) throw ConfigError("max_objects must be positive");
  const int f = feature_width();
  const int h = layout_.hidden;
  const int a = num_actions();
  theta_ = nn::Mlp("theta", {f, h, h, a});
  v_neu_ = nn::Mlp("v_neu", {f, h, h, 1});
  v_log_ = nn::Mlp("v_log", {std::max(1, num_state_predicates()), h, 1});
  blender_ = nn::Mlp("lambda.net", {f, h, h, 1});
  phi_ = ad::Parameter("phi", ad::Matrix::Zero(static_cast<Eigen::Index>(layout_.policy.program.clauses.size()), 1));
  const std::size_t nb = layout_.blending ? layout_.blending->program.clauses.size() : 0;
  blend_w_ = ad::Parameter("lambda.rules", ad::Matrix::Zero(static_cast<Eigen::Index>(nb), 1));
  for (const std::string& p : layout_.decls.spatial_names()) psi_.emplace(p, ValuationNet(p));
}

void HybridAgent::init(std::uint64_t seed) {
  init_theta(seed);
  init_lambda(seed);
  init_critics(seed);
  init_psi(seed);
  phi_.value.setZero();
  phi_.zero_grad();
}

void HybridAgent::init_theta(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 101));
  theta_.init(rng, true);
}

void HybridAgent::init_lambda(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 102));
  blender_.init(rng, true);
  blend_w_.value.setZero();
  blend_w_.zero_grad();
}

void HybridAgent::init_critics(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 103));
  v_neu_.init(rng, true);
  v_log_.init(rng, true);
}

void HybridAgent::init_psi(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 104));
  for (auto& [name, net] : psi_) net.init(rng);
}

int HybridAgent::feature_width() const {
  const int per = 4 + static_cast<int>(layout_.object_types.size()) + 3;
  return per * layout_.max_objects;
}

ad::Matrix HybridAgent::object_features(std::span<const Scene> scenes) const {
  const int per = 4 + static_cast<int>(layout_.object_types.size()) + 3;
  ad::Matrix x = ad::Matrix::Zero(static_cast<Eigen::Index>(scenes.size()), feature_width());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& sc = scenes[s];
    if (static_cast<int>(sc.objects.size()) > layout_.max_objects) {
      throw Error("scene has more objects than the agent's feature layout (" + std::to_string(layout_.max_objects) + ")");
    }
    for (std::size_t i = 0; i < sc.objects.size(); ++i) {
      const Object& o = sc.objects[i];
      const Eigen::Index base = static_cast<Eigen::Index>(i) * per;
      const auto row = static_cast<Eigen::Index>(s);
      x(row, base) = 1.0;
      x(row, base + 1) = o.visible ? 1.0 : 0.0;
      x(row, base + 2) = o.x / sc.width;
      x(row, base + 3) = o.y / sc.height;
      const auto t = std::find(layout_.object_types.begin(), layout_.object_types.end(), o.type);
      if (t != layout_.object_types.end()) x(row, base + 4 + (t - layout_.object_types.begin())) = 1.0;
      const Eigen::Index ob = base + 4 + static_cast<Eigen::Index>(layout_.object_types.size());
      if (o.orientation == "left") x(row, ob) = 1.0;
      else if (o.orientation == "straight") x(row, ob + 1) = 1.0;
      else if (o.orientation == "right") x(row, ob + 2) = 1.0;
    }
  }
  return x;
}

ad::Matrix HybridAgent::atom_features(const GroundAtomTable& table) const {
  const int width = std::max(1, num_state_predicates());
  ad::Matrix f = ad::Matrix::Zero(table.num_scenes(), width);
  const ad::Matrix& v = table.values().value();
  for (int s = 0; s < table.num_scenes(); ++s) {
    for (const auto& [atom, entry] : table.atoms(s)) {
      const auto it = std::find(state_preds_.begin(), state_preds_.end(), atom.pred);
      if (it == state_preds_.end()) continue;
      const Eigen::Index col = it - state_preds_.begin();
      f(s, col) = std::max(f(s, col), v(entry.slot, 0));
    }
  }
  return f;
}

namespace {

ad::Var column(const ad::Var& m, int col) {
  std::vector<int> idx(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) idx[static_cast<std::size_t>(r)] = static_cast<int>(r * m.cols() + col);
  return ad::gather(m, std::move(idx));
}

}  // namespace

ad::Var blend_rows(const ad::Var& beta, const ad::Var& a, const ad::Var& b) {
  return ad::add(ad::scale_rows(a, beta), ad::scale_rows(b, ad::one_minus(beta)));
}

ad::Var blender_entropy(const ad::Var& beta) {
  ad::Var nb = ad::one_minus(beta);
  return ad::neg(ad::add(ad::mul(beta, ad::safe_log(beta)), ad::mul(nb, ad::safe_log(nb))));
}

double blender_entropy(double beta) {
  auto sl = [](double x) { return std::log(std::max(x, ad::kLogFloor)); };
  return -(beta * sl(beta) + (1.0 - beta) * sl(1.0 - beta));
}

ad::Var policy_entropy(const ad::Var& pi) { return ad::neg(ad::sum_rows(ad::mul(pi, ad::safe_log(pi)))); }

AgentOutput HybridAgent::forward(ad::Tape& tape, std::span<const Scene> scenes, const Trainable& tr) {
  AgentOutput out;
  const int B = static_cast<int>(scenes.size());
  if (B == 0) throw Error("agent forward on an empty batch");

  GroundAtomTable table = evaluate_atoms(tape, scenes, layout_.decls, state_preds_, psi_, *status_, tr.psi);

  std::vector<std::vector<GroundedClause>> grounded(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) grounded[s] = ground(layout_.policy.program, scenes[s]);
  ad::Var phi = tape.bind(phi_, tr.phi);
  ad::Var scores = head_scores(tape, table, grounded, phi, layout_.policy.head_order);
  out.pi_log = action_distribution(scores);

  last_atom_features_ = atom_features(table);
  if (pinned_atom_features && pinned_atom_features->rows() == last_atom_features_.rows()) {
    last_atom_features_ = *pinned_atom_features;
  }
  ad::Var atom_x = tape.constant(last_atom_features_);
  out.v_log = v_log_.forward(tape, atom_x, tr.v_log);

  if (force_beta_zero) {
    out.beta = tape.constant(ad::Matrix::Zero(B, 1));
    out.pi = out.pi_log;
    out.value = out.v_log;
    return out;
  }

  ad::Var x = tape.constant(object_features(scenes));
  out.pi_neu = ad::softmax(theta_.forward(tape, x, tr.theta));
  out.v_neu = v_neu_.forward(tape, x, tr.v_neu);

  if (layout_.blend_mode == BlendMode::kNeural) {
    out.beta = ad::sigmoid(blender_.forward(tape, x, tr.lambda));
  } else {
    std::vector<std::vector<GroundedClause>> bg(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) bg[s] = ground(layout_.blending->program, scenes[s]);
    ad::Var w = tape.bind(blend_w_, tr.lambda);
    ad::Var hs = head_scores(tape, table, bg, w, layout_.blending->head_order);
    ad::Var n = column(hs, 0);
    ad::Var l = column(hs, 1);
    out.beta = ad::div(n, ad::add_scalar(ad::add(n, l), 1e-8));
  }
  out.pi = blend_rows(out.beta, out.pi_neu, out.pi_log);
  out.value = ad::add(ad::mul(out.beta, out.v_neu), ad::mul(ad::one_minus(out.beta), out.v_log));
  return out;
}

std::vector<ad::Parameter*> HybridAgent::checkpoint_arrays() {
  std::vector<ad::Parameter*> out;
  auto append = [&](std::vector<ad::Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  append(theta_.parameters());
  append(v_neu_.parameters());
  append(v_log_.parameters());
  append(blender_.parameters());
  out.push_back(&blend_w_);
  out.push_back(&phi_);
  append(psi_parameters());
  return out;
}

std::vector<ad::Parameter*> HybridAgent::psi_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& [name, net] : psi_) {
    for (ad::Parameter* p : net.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<ad::Parameter*> HybridAgent::parameters(const Trainable& w) {
  std::vector<ad::Parameter*> out;
  auto append = [&](std::vector<ad::Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (w.theta) append(theta_.parameters());
  if (w.v_neu) append(v_neu_.parameters());
  if (w.v_log) append(v_log_.parameters());
  if (w.lambda) {
    if (layout_.blend_mode == BlendMode::kNeural) append(blender_.parameters());
    else if (blend_w_.size() > 0) out.push_back(&blend_w_);
  }
  if (w.phi && phi_.size() > 0) out.push_back(&phi_);
  if (w.psi) append(psi_parameters());
  return out;
}

}  // namespace grail
