#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// matrices.  A Tape owns every intermediate value of one forward pass; Var is
// a lightweight handle into it.  Parameters live outside the tape and are
// bound either as leaves (gradient flows into Parameter::grad) or as
// constants (no gradient, no backward work).

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "grail/error.hpp"

namespace grail::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// backward() called on a value that is not 1x1.
class NonScalarLoss : public Error {
 public:
  using Error::Error;
};

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value);

  void zero_grad();
  Eigen::Index size() const { return value.size(); }

  std::string name;
  Matrix value;
  Matrix grad;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 Var.
  double item() const;
  /// Element (r, c) of the value.
  double at(Eigen::Index r, Eigen::Index c = 0) const { return value()(r, c); }

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Propagates the node's output gradient into its inputs.
  using Backprop = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar(double value);
  /// Binds a parameter as a differentiable leaf.
  Var leaf(Parameter& param);
  /// Leaf when `trainable`, otherwise a constant copy of the current value.
  Var bind(Parameter& param, bool trainable) {
    return trainable ? leaf(param) : constant(param.value);
  }

  /// Accumulates d(loss)/d(leaf) into each reachable parameter's grad, then
  /// releases the backward closures.  The tape cannot be differentiated again.
  void backward(const Var& loss);

  // Used by op implementations.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop);
  Var record(Matrix value, std::span<const Var> inputs, Backprop backprop);
  bool needs_grad(const Var& v) const { return nodes_[v.id_].needs_grad; }
  const Matrix& value_of(int id) const { return nodes_[id].value; }
  /// Adds `g` into the gradient slot of `v` (no-op for constants).
  void accumulate(const Var& v, const Matrix& g);
  void accumulate(const Var& v, Matrix&& g);
  Matrix& grad_slot(const Var& v);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Records the outcome of every non-smooth branch (relu masks, clamp regions,
// min selections) taken during a forward pass, and can replay them.  Replaying
// the branches of a base point while evaluating perturbed points yields the
// smooth piece the base point lies on, which is what finite-difference
// gradient checks need near kinks.
class BranchLog {
 public:
  enum class Mode { kRecord, kReplay };

  explicit BranchLog(Mode mode) : mode_(mode) {}

  Mode mode() const { return mode_; }
  void rewind() { cursor_ = 0; }
  void set_mode(Mode mode) { mode_ = mode; cursor_ = 0; }
  std::size_t decisions() const { return log_.size(); }

  /// Returns the branch codes to use for one op invocation.
  std::vector<std::uint8_t> decide(std::vector<std::uint8_t> natural);

  /// Currently active log on this thread, or nullptr.
  static BranchLog* active();

 private:
  friend class BranchScope;
  Mode mode_;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::uint8_t>> log_;
};

/// Installs a BranchLog as the active one for the current thread.
class BranchScope {
 public:
  explicit BranchScope(BranchLog& log);
  ~BranchScope();
  BranchScope(const BranchScope&) = delete;
  BranchScope& operator=(const BranchScope&) = delete;

 private:
  BranchLog* previous_;
};

// ---- elementwise (operands equal-shaped, or one of them 1x1) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
/// 1 - a
Var one_minus(const Var& a);
Var square(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// log(max(a, 1e-7)); zero gradient where clamped.
Var safe_log(const Var& a);
Var clamp(const Var& a, double lo, double hi);

inline constexpr double kLogFloor = 1e-7;

// ---- linear algebra / reductions ----
Var matmul(const Var& a, const Var& b);
/// x w + b with the 1 x m bias broadcast over rows.
Var affine(const Var& x, const Var& w, const Var& b);
/// relu(affine(x, w, b)) in one node.
Var affine_relu(const Var& x, const Var& w, const Var& b);
/// x (n x m) + row (1 x m) broadcast over rows.
Var add_row(const Var& x, const Var& row);
Var sum(const Var& a);
Var mean(const Var& a);
/// Row sums: (n x m) -> (n x 1).
Var sum_rows(const Var& a);
/// Softmax over the last axis (each row).
Var softmax(const Var& a);
/// Each row divided by its sum.
Var normalize_rows(const Var& a);
/// m (n x k) with row i multiplied by col(i) (col is n x 1).
Var scale_rows(const Var& m, const Var& col);
/// Vertical concatenation of equal-width blocks.
Var concat_rows(std::span<const Var> parts);

// ---- indexing ----
/// Column (n x 1) of elements picked by flat row-major index.
Var gather(const Var& a, std::vector<int> flat_index);
/// Column with out[i] = product of a[j] over j in lists[i] (empty -> 1).
Var gather_prod(const Var& a, std::vector<std::vector<int>> lists);
/// Column with out[s] = 1 - prod(1 - a[i]) over i with segment[i] == s.
Var segment_noisy_or(const Var& a, std::vector<int> segment, int num_segments);
/// (rows x cols) matrix; cell k aggregates a[j] for j in lists[k]: empty -> 0,
/// one entry -> a[j] exactly, several -> noisy-or.
Var gather_noisy_or(const Var& a, std::vector<std::vector<int>> lists, int rows, int cols);

}  // namespace grail::ad
