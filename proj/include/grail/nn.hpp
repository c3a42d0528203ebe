#pragma once

#include <string>
#include <vector>

#include "grail/autodiff.hpp"
#include "grail/rng.hpp"

namespace grail::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

/// y = x W + b, with W stored (in x out) and b (1 x out).
struct Dense {
  Dense() = default;
  Dense(std::string name, int in, int out);

  Var forward(Tape& tape, const Var& x, bool trainable);
  int in() const { return static_cast<int>(weight.value.rows()); }
  int out() const { return static_cast<int>(weight.value.cols()); }

  Parameter weight;
  Parameter bias;
};

/// Stack of dense layers with ReLU between them and a linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, std::vector<int> widths);

  /// Glorot-uniform weights, zero biases; the last layer is zeroed when
  /// `zero_last` is set.
  void init(Rng& rng, bool zero_last);
  /// Every weight and bias uniform in [-scale, scale].
  void randomize(Rng& rng, double scale);

  Var forward(Tape& tape, const Var& x, bool trainable);
  /// Plain evaluation without a tape (row per sample).
  Matrix eval(const Matrix& x) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  const std::vector<int>& widths() const { return widths_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::vector<int> widths_;
  std::vector<Dense> layers_;
};

}  // namespace grail::nn
