#pragma once

#include <vector>

#include "grail/autodiff.hpp"

namespace grail {

struct AdamConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Number of steps over which the rate decays linearly to zero; 0 disables decay.
  long long horizon = 0;
  /// Global L2 gradient-norm bound; 0 or negative disables clipping.
  double clip = 0.5;
};

class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig cfg);

  /// Learning rate the next step() will use.
  double current_lr() const;
  /// Clips, updates every parameter, and advances the step counter.  Returns
  /// the global gradient norm before clipping.
  double step();
  void zero_grad();

  long long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<ad::Parameter*>& params() const { return params_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig cfg_;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
  long long t_ = 0;
};

/// L2 norm over all gradients.
double global_grad_norm(const std::vector<ad::Parameter*>& params);

/// Scales all gradients so their global norm is at most `max_norm`; returns
/// the norm before scaling.
double clip_grad_norm(const std::vector<ad::Parameter*>& params, double max_norm);

}  // namespace grail
