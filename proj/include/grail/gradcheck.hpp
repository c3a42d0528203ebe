#pragma once

// Finite-difference gradient checks.  Branch outcomes (relu masks, clamp and
// min selections) of the base point are replayed for the perturbed points,
// so the difference quotient stays on the base point's smooth piece.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grail/autodiff.hpp"
#include "grail/rng.hpp"

namespace grail {

/// |a - f| / max(|a|, |f|, 1e-2): relative error, absolute (scaled by 100)
/// near zero, so 1e-4 means 1e-6 absolute for tiny gradients.
double gradient_error(double autodiff, double finite_difference);

struct GradcheckStats {
  long long entries = 0;
  double max_error = 0.0;
  std::string worst;
};

/// Compares autodiff and central differences of `loss` for up to
/// `max_entries` randomly chosen coordinates of each parameter (all of them
/// when the parameter is smaller).
GradcheckStats check_gradients(const std::function<ad::Var(ad::Tape&)>& loss,
                               const std::vector<ad::Parameter*>& params, Rng& rng, int max_entries = 48,
                               double h = 1e-3);

struct GradcheckItem {
  std::string target;
  int instances = 0;
  GradcheckStats stats;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckItem> items;
  double max_error = 0.0;
  bool passed = false;
};

inline constexpr double kGradTolerance = 1e-4;

/// Targets: valuation, policy, critics, blender, total_loss.
std::vector<std::string> gradcheck_targets();
GradcheckItem gradcheck_target(const std::string& target, int instances, std::uint64_t seed, double h = 1e-3);
GradcheckReport run_gradcheck(int instances = 20, std::uint64_t seed = 0, double h = 1e-3);

}  // namespace grail
