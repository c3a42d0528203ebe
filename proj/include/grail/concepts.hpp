#pragma once

// Learnable valuation functions for spatial predicates, the offset grid they
// are aligned on, and the concept-alignment loss against proxy functions.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "grail/autodiff.hpp"
#include "grail/nn.hpp"
#include "grail/proxy.hpp"
#include "grail/scene.hpp"

namespace grail {

class NonfiniteInput : public Error {
 public:
  using Error::Error;
};

class MissingProxy : public Error {
 public:
  using Error::Error;
};

/// 2 -> 64 -> 32 -> 1 ReLU network with a sigmoid output.
class ValuationNet {
 public:
  explicit ValuationNet(std::string predicate = {});

  /// Glorot-uniform hidden layers, zero output layer (0.5 everywhere).
  void init(Rng& rng);

  /// offsets: N x 2 (dx, dy) -> N x 1 truth values.
  ad::Var forward(ad::Tape& tape, const ad::Var& offsets, bool trainable);
  ad::Matrix eval(const ad::Matrix& offsets) const;
  double eval(double dx, double dy) const;

  const std::string& predicate() const { return predicate_; }
  nn::Mlp& mlp() { return mlp_; }
  const nn::Mlp& mlp() const { return mlp_; }
  std::vector<ad::Parameter*> parameters() { return mlp_.parameters(); }

 private:
  std::string predicate_;
  nn::Mlp mlp_;
};

using ValuationMap = std::map<std::string, ValuationNet>;

struct Offset {
  double dx = 0.0;
  double dy = 0.0;
};

/// ((x1 - x2) / W, (y1 - y2) / H), each clamped to [-1, 1].
Offset normalized_offset(double x1, double y1, double x2, double y2, double W, double H);

double eval_valuation(const ValuationNet& net, double x1, double y1, double x2, double y2, double W, double H);

struct AlignmentGrid {
  int K = 0;
  /// K*K rows of (dx, dy), row-major over (r, c).
  ad::Matrix offsets;
};

/// dx = 2c/(K+1) - 1, dy = 2r/(K+1) - 1 for r, c in 1..K.
AlignmentGrid build_grid(int K);

/// Precomputes proxy targets on a grid and evaluates the alignment loss.
class ConceptAligner {
 public:
  ConceptAligner() = default;
  ConceptAligner(const std::map<std::string, ProxyFn>& proxies, std::vector<std::string> aligned, int K);

  /// Mean over aligned predicates of the mean BCE(proxy, net) on the grid.
  ad::Var loss(ad::Tape& tape, ValuationMap& nets, bool trainable) const;
  double loss_value(const ValuationMap& nets) const;
  /// BCE of a single net against its own predicate's targets.
  ad::Var loss(ad::Tape& tape, ValuationNet& net, bool trainable) const;
  /// Loss of a single predicate.
  double loss_value(const ValuationNet& net) const;

  const std::vector<std::string>& aligned() const { return aligned_; }
  const AlignmentGrid& grid() const { return grid_; }
  const ad::Matrix& targets(const std::string& predicate) const;
  bool empty() const { return aligned_.empty(); }

 private:
  std::vector<std::string> aligned_;
  AlignmentGrid grid_;
  std::map<std::string, ad::Matrix> targets_;
};

ad::Var concept_alignment_loss(ad::Tape& tape, ValuationMap& nets, const std::map<std::string, ProxyFn>& proxies,
                               const AlignmentGrid& grid, const std::vector<std::string>& aligned, bool trainable);

struct AlignmentFit {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

/// Minimizes the alignment loss of one net alone with Adam (no clipping,
/// constant learning rate).
AlignmentFit fit_alignment(ValuationNet& net, const ConceptAligner& aligner, int steps, double lr);

/// Mean BCE(t, y) = -[t log y + (1-t) log(1-y)] with the log floor.
double bce(double target, double prediction);

/// 1 - gamma * t / T.
double anneal_factor(long long t, long long T, double gamma);

struct Heatmap {
  std::string predicate;
  std::string mode;
  int rows = 0;
  int cols = 0;
  double width = 2.0;
  double height = 2.0;
  std::vector<double> values;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
};

using OffsetFn = std::function<double(double dx, double dy)>;

/// Samples f on a resolution x resolution offset grid spanning (-1, 1)^2.
Heatmap heatmap_offset(const OffsetFn& f, const std::string& predicate, int resolution);
/// Sweeps a hypothetical agent over the frame (cell centres) against the
/// object at `anchor`; cell (r, c) evaluates f on the normalized offset from
/// the anchor.
Heatmap heatmap_scene(const OffsetFn& f, const std::string& predicate, const Scene& scene, int anchor, int resolution);
/// The same sweep evaluated at one explicit agent position.
double scene_value(const OffsetFn& f, const Scene& scene, int anchor, double x, double y);

void write_heatmap_csv(const Heatmap& h, const std::string& path);
void write_heatmap_ppm(const Heatmap& h, const std::string& path);

}  // namespace grail
