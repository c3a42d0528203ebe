#include "grail/nn.hpp"

#include <cmath>

namespace grail::nn {

Dense::Dense(std::string name, int in, int out)
    : weight(name + ".w", Matrix::Zero(in, out)), bias(name + ".b", Matrix::Zero(1, out)) {}

Var Dense::forward(Tape& tape, const Var& x, bool trainable) {
  Var w = tape.bind(weight, trainable);
  Var b = tape.bind(bias, trainable);
  return ad::affine(x, w, b);
}

Mlp::Mlp(std::string name, std::vector<int> widths) : name_(std::move(name)), widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ConfigError("Mlp " + name_ + ": needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    if (widths_[i] <= 0 || widths_[i + 1] <= 0) throw ConfigError("Mlp " + name_ + ": widths must be positive");
    layers_.emplace_back(name_ + ".l" + std::to_string(i), widths_[i], widths_[i + 1]);
  }
}

void Mlp::init(Rng& rng, bool zero_last) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Dense& d = layers_[i];
    d.bias.value.setZero();
    if (zero_last && i + 1 == layers_.size()) {
      d.weight.value.setZero();
      continue;
    }
    const double limit = std::sqrt(6.0 / (d.in() + d.out()));
    for (Eigen::Index k = 0; k < d.weight.value.size(); ++k) d.weight.value.data()[k] = rng.uniform(-limit, limit);
  }
  for (Parameter* p : parameters()) p->zero_grad();
}

void Mlp::randomize(Rng& rng, double scale) {
  for (Parameter* p : parameters()) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = rng.uniform(-scale, scale);
    p->zero_grad();
  }
}

Var Mlp::forward(Tape& tape, const Var& x, bool trainable) {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Dense& d = layers_[i];
    if (i + 1 < layers_.size()) {
      h = ad::affine_relu(h, tape.bind(d.weight, trainable), tape.bind(d.bias, trainable));
    } else {
      h = d.forward(tape, h, trainable);
    }
  }
  return h;
}

Matrix Mlp::eval(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Matrix z = h * layers_[i].weight.value;
    z.rowwise() += layers_[i].bias.value.row(0);
    if (i + 1 < layers_.size()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (const Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

}  // namespace grail::nn
