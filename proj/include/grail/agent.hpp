#pragma once

// Hybrid agent: neural policy over flattened object features, logic policy
// over the reasoner, a blending module, and neural/logic critics.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grail/concepts.hpp"
#include "grail/nn.hpp"
#include "grail/reasoner.hpp"

namespace grail {

enum class BlendMode { kNeural, kLogic };

BlendMode parse_blend_mode(const std::string& s);
const char* blend_mode_name(BlendMode m);

/// Which parameter groups are tape leaves in a forward pass.
struct Trainable {
  bool theta = false;   // neural policy
  bool v_neu = false;   // neural critic
  bool v_log = false;   // logic critic
  bool lambda = false;  // blender
  bool phi = false;     // policy clause weights
  bool psi = false;     // valuation nets

  static Trainable none() { return {}; }
  static Trainable all() { return {true, true, true, true, true, true}; }
};

struct AgentOutput {
  ad::Var pi;      // B x A
  ad::Var pi_neu;  // B x A (invalid when beta is forced to zero)
  ad::Var pi_log;  // B x A
  ad::Var beta;    // B x 1
  ad::Var value;   // B x 1
  ad::Var v_neu;   // B x 1 (invalid when beta is forced to zero)
  ad::Var v_log;   // B x 1
};

struct AgentLayout {
  logic::Decls decls;
  CompiledProgram policy;
  std::optional<CompiledProgram> blending;
  BlendMode blend_mode = BlendMode::kLogic;
  std::vector<std::string> object_types;
  int max_objects = 8;
  int hidden = 64;
};

class HybridAgent {
 public:
  HybridAgent(AgentLayout layout, const StatusRegistry& status);

  /// Initializes every parameter group from `seed`.
  void init(std::uint64_t seed);
  void init_theta(std::uint64_t seed);
  void init_lambda(std::uint64_t seed);
  void init_critics(std::uint64_t seed);
  void init_psi(std::uint64_t seed);

  AgentOutput forward(ad::Tape& tape, std::span<const Scene> scenes, const Trainable& trainable);

  /// Flattened object features, one row per scene.
  ad::Matrix object_features(std::span<const Scene> scenes) const;
  int feature_width() const;
  /// Max-pooled state-atom values per declared state predicate.
  ad::Matrix atom_features(const GroundAtomTable& table) const;
  int num_state_predicates() const { return static_cast<int>(state_preds_.size()); }

  std::vector<ad::Parameter*> parameters(const Trainable& which);
  /// Every array of the agent, in checkpoint order.
  std::vector<ad::Parameter*> checkpoint_arrays();
  std::vector<ad::Parameter*> psi_parameters();

  const AgentLayout& layout() const { return layout_; }
  const std::vector<std::string>& action_names() const { return actions_; }
  int num_actions() const { return static_cast<int>(actions_.size()); }

  ValuationMap& psi() { return psi_; }
  const ValuationMap& psi() const { return psi_; }
  ad::Parameter& phi() { return phi_; }
  ad::Parameter& blend_weights() { return blend_w_; }
  nn::Mlp& theta() { return theta_; }
  nn::Mlp& blender_net() { return blender_; }
  nn::Mlp& critic_neu() { return v_neu_; }
  nn::Mlp& critic_log() { return v_log_; }

  bool force_beta_zero = false;
  /// Critic input features are detached from psi.  Finite-difference checks
  /// pin them at the base point so both sides see the same function.
  std::optional<ad::Matrix> pinned_atom_features;
  const ad::Matrix& last_atom_features() const { return last_atom_features_; }

 private:
  AgentLayout layout_;
  const StatusRegistry* status_;
  std::vector<std::string> actions_;
  std::vector<int> state_preds_;
  nn::Mlp theta_;
  nn::Mlp v_neu_;
  nn::Mlp v_log_;
  nn::Mlp blender_;
  ad::Parameter phi_;
  ad::Parameter blend_w_;
  ValuationMap psi_;
  ad::Matrix last_atom_features_;
};

/// Binary entropy of beta with the log floor (per row).
ad::Var blender_entropy(const ad::Var& beta);
double blender_entropy(double beta);
/// -sum pi log pi per row.
ad::Var policy_entropy(const ad::Var& pi);

/// beta * a + (1 - beta) * b, rows scaled by the B x 1 column beta.
ad::Var blend_rows(const ad::Var& beta, const ad::Var& a, const ad::Var& b);

}  // namespace grail
