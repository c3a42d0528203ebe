#include "grail/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace grail::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": operand shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not conform");
}

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

enum class Bcast { kSame, kLeftScalar, kRightScalar };

Bcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::kSame;
  if (is_scalar(a)) return Bcast::kLeftScalar;
  if (is_scalar(b)) return Bcast::kRightScalar;
  shape_error(op, a, b);
}

// Reduces a full-shape gradient onto an operand that may have been broadcast.
Matrix reduce_to(const Matrix& g, bool operand_is_broadcast_scalar) {
  if (!operand_is_broadcast_scalar) return g;
  Matrix s(1, 1);
  s(0, 0) = g.sum();
  return s;
}

thread_local BranchLog* g_active_log = nullptr;

#if defined(__GLIBC__)
// Tapes allocate and free many megabyte-sized temporaries per pass.  glibc
// serves those with mmap by default and trims the heap eagerly, which turns
// every pass into page faults; keep them on the heap instead.
const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

std::vector<std::uint8_t> branch(std::vector<std::uint8_t> natural) {
  if (g_active_log == nullptr) return natural;
  return g_active_log->decide(std::move(natural));
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error("operands recorded on different tapes");
  return t;
}

}  // namespace

// ---------------------------------------------------------------- Parameter

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  } else {
    grad.setZero();
  }
}

// ---------------------------------------------------------------- Var

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw Error("value() on an unbound Var");
  return tape_->value_of(id_);
}

double Var::item() const {
  const Matrix& v = value();
  if (!is_scalar(v)) throw ShapeError("item(): value is " + shape_str(v) + ", not 1x1");
  return v(0, 0);
}

// ---------------------------------------------------------------- Tape

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::leaf(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, true, false, &param, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backprop));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backprop backprop) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || nodes_[in.id_].needs_grad;
  Node node{std::move(value), {}, needs, false, nullptr, {}};
  if (needs) node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_slot(const Var& v) {
  Node& n = nodes_[v.id_];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, Matrix&& g) {
  Node& n = nodes_[v.id_];
  if (!n.needs_grad) return;
  if (!n.has_grad && g.rows() == n.value.rows() && g.cols() == n.value.cols()) {
    n.grad = std::move(g);
    n.has_grad = true;
    return;
  }
  accumulate(v, static_cast<const Matrix&>(g));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  if (!nodes_[v.id_].needs_grad) return;
  Matrix& slot = grad_slot(v);
  if (slot.rows() != g.rows() || slot.cols() != g.cols()) {
    throw ShapeError("gradient shape " + shape_str(g) + " does not match value " + shape_str(slot));
  }
  slot += g;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw Error("backward: loss belongs to another tape");
  if (consumed_) throw Error("backward: tape already differentiated");
  const Matrix& lv = nodes_[loss.id_].value;
  if (!is_scalar(lv)) throw NonScalarLoss("backward: loss is " + shape_str(lv) + ", not scalar");
  consumed_ = true;
  if (!nodes_[loss.id_].needs_grad) return;
  grad_slot(loss)(0, 0) = 1.0;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backprop) n.backprop(*this, n.grad);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      p.grad += n.grad;
    }
  }
  for (Node& n : nodes_) n.backprop = nullptr;
}

// ---------------------------------------------------------------- BranchLog

std::vector<std::uint8_t> BranchLog::decide(std::vector<std::uint8_t> natural) {
  if (mode_ == Mode::kRecord) {
    log_.push_back(natural);
    return natural;
  }
  if (cursor_ >= log_.size() || log_[cursor_].size() != natural.size()) {
    throw Error("BranchLog: replayed forward pass diverged from the recorded one");
  }
  return log_[cursor_++];
}

BranchLog* BranchLog::active() { return g_active_log; }

BranchScope::BranchScope(BranchLog& log) : previous_(g_active_log) {
  log.cursor_ = 0;
  g_active_log = &log;
}

BranchScope::~BranchScope() { g_active_log = previous_; }

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast k = broadcast_kind("add", av, bv);
  Matrix out;
  if (k == Bcast::kSame) out = av + bv;
  else if (k == Bcast::kLeftScalar) out = (bv.array() + av(0, 0)).matrix();
  else out = (av.array() + bv(0, 0)).matrix();
  return t.record(std::move(out), {a, b}, [a, b, k](Tape& tp, const Matrix& g) {
    tp.accumulate(a, reduce_to(g, k == Bcast::kLeftScalar));
    tp.accumulate(b, reduce_to(g, k == Bcast::kRightScalar));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast k = broadcast_kind("sub", av, bv);
  Matrix out;
  if (k == Bcast::kSame) out = av - bv;
  else if (k == Bcast::kLeftScalar) out = (av(0, 0) - bv.array()).matrix();
  else out = (av.array() - bv(0, 0)).matrix();
  return t.record(std::move(out), {a, b}, [a, b, k](Tape& tp, const Matrix& g) {
    tp.accumulate(a, reduce_to(g, k == Bcast::kLeftScalar));
    if (tp.needs_grad(b)) tp.accumulate(b, reduce_to(-g, k == Bcast::kRightScalar));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast k = broadcast_kind("mul", av, bv);
  Matrix out;
  if (k == Bcast::kSame) out = (av.array() * bv.array()).matrix();
  else if (k == Bcast::kLeftScalar) out = bv * av(0, 0);
  else out = av * bv(0, 0);
  return t.record(std::move(out), {a, b}, [a, b, k](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (tp.needs_grad(a)) {
      Matrix ga;
      if (k == Bcast::kSame) ga = (g.array() * bv.array()).matrix();
      else if (k == Bcast::kLeftScalar) ga = Matrix::Constant(1, 1, (g.array() * bv.array()).sum());
      else ga = g * bv(0, 0);
      tp.accumulate(a, std::move(ga));
    }
    if (tp.needs_grad(b)) {
      Matrix gb;
      if (k == Bcast::kSame) gb = (g.array() * av.array()).matrix();
      else if (k == Bcast::kRightScalar) gb = Matrix::Constant(1, 1, (g.array() * av.array()).sum());
      else gb = g * av(0, 0);
      tp.accumulate(b, std::move(gb));
    }
  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast k = broadcast_kind("div", av, bv);
  Matrix out;
  if (k == Bcast::kSame) out = (av.array() / bv.array()).matrix();
  else if (k == Bcast::kLeftScalar) out = (av(0, 0) / bv.array()).matrix();
  else out = av / bv(0, 0);
  return t.record(std::move(out), {a, b}, [a, b, k](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (tp.needs_grad(a)) {
      Matrix ga;
      if (k == Bcast::kSame) ga = (g.array() / bv.array()).matrix();
      else if (k == Bcast::kLeftScalar) ga = Matrix::Constant(1, 1, (g.array() / bv.array()).sum());
      else ga = g / bv(0, 0);
      tp.accumulate(a, std::move(ga));
    }
    if (tp.needs_grad(b)) {
      Matrix gb;
      if (k == Bcast::kSame) {
        gb = (-g.array() * av.array() / bv.array().square()).matrix();
      } else if (k == Bcast::kRightScalar) {
        const double s = bv(0, 0);
        gb = Matrix::Constant(1, 1, -(g.array() * av.array()).sum() / (s * s));
      } else {
        gb = (-g.array() * av(0, 0) / bv.array().square()).matrix();
      }
      tp.accumulate(b, std::move(gb));
    }
  });
}

Var minimum(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("minimum", av, bv);
  std::vector<std::uint8_t> pick_a(static_cast<std::size_t>(av.size()));
  for (Eigen::Index i = 0; i < av.size(); ++i) pick_a[i] = av.data()[i] <= bv.data()[i] ? 1 : 0;
  pick_a = branch(std::move(pick_a));
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.size(); ++i) {
    out.data()[i] = pick_a[i] ? av.data()[i] : bv.data()[i];
  }
  return t.record(std::move(out), {a, b}, [a, b, pick_a = std::move(pick_a)](Tape& tp, const Matrix& g) {
    Matrix ga = Matrix::Zero(g.rows(), g.cols());
    Matrix gb = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      (pick_a[i] ? ga : gb).data()[i] = g.data()[i];
    }
    tp.accumulate(a, std::move(ga));
    tp.accumulate(b, std::move(gb));
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double factor) {
  Tape& t = tape_of(a);
  return t.record(a.value() * factor, {a},
                  [a, factor](Tape& tp, const Matrix& g) { tp.accumulate(a, g * factor); });
}

Var add_scalar(const Var& a, double offset) {
  Tape& t = tape_of(a);
  return t.record((a.value().array() + offset).matrix(), {a},
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var one_minus(const Var& a) {
  Tape& t = tape_of(a);
  return t.record((1.0 - a.value().array()).matrix(), {a},
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a, -g); });
}

Var square(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().array().square().matrix(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (2.0 * g.array() * a.value().array()).matrix());
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (g_active_log == nullptr) {
    // The mask is recoverable from the output: y > 0 exactly where x > 0.
    Matrix out = av.cwiseMax(0.0);
    const int self = static_cast<int>(t.size());
    return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
      const Matrix& y = tp.value_of(self);
      tp.accumulate(a, (y.array() > 0.0).select(g, 0.0).matrix());
    });
  }
  std::vector<std::uint8_t> on(static_cast<std::size_t>(av.size()));
  for (Eigen::Index i = 0; i < av.size(); ++i) on[i] = av.data()[i] > 0.0 ? 1 : 0;
  on = branch(std::move(on));
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.size(); ++i) out.data()[i] = on[i] ? av.data()[i] : 0.0;
  return t.record(std::move(out), {a}, [a, on = std::move(on)](Tape& tp, const Matrix& g) {
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) ga.data()[i] = on[i] ? g.data()[i] : 0.0;
    tp.accumulate(a, std::move(ga));
  });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value_of(self);
    tp.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().tanh().matrix();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value_of(self);
    tp.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().exp().matrix();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (g.array() * tp.value_of(self).array()).matrix());
  });
}

Var log(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().array().log().matrix(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (g.array() / a.value().array()).matrix());
  });
}

Var safe_log(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  std::vector<std::uint8_t> clamped(static_cast<std::size_t>(av.size()));
  for (Eigen::Index i = 0; i < av.size(); ++i) clamped[i] = av.data()[i] < kLogFloor ? 1 : 0;
  clamped = branch(std::move(clamped));
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.size(); ++i) {
    out.data()[i] = clamped[i] ? std::log(kLogFloor) : std::log(av.data()[i]);
  }
  return t.record(std::move(out), {a}, [a, clamped = std::move(clamped)](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      ga.data()[i] = clamped[i] ? 0.0 : g.data()[i] / av.data()[i];
    }
    tp.accumulate(a, std::move(ga));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  // 0: below lo, 1: inside, 2: above hi
  std::vector<std::uint8_t> region(static_cast<std::size_t>(av.size()));
  for (Eigen::Index i = 0; i < av.size(); ++i) {
    const double x = av.data()[i];
    region[i] = x < lo ? 0 : (x > hi ? 2 : 1);
  }
  region = branch(std::move(region));
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.size(); ++i) {
    out.data()[i] = region[i] == 0 ? lo : (region[i] == 2 ? hi : av.data()[i]);
  }
  return t.record(std::move(out), {a}, [a, region = std::move(region)](Tape& tp, const Matrix& g) {
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) ga.data()[i] = region[i] == 1 ? g.data()[i] : 0.0;
    tp.accumulate(a, std::move(ga));
  });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out = av * bv;
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(a)) tp.grad_slot(a).noalias() += g * b.value().transpose();
    if (tp.needs_grad(b)) tp.grad_slot(b).noalias() += a.value().transpose() * g;
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != wv.rows()) shape_error("affine", xv, wv);
  if (bv.rows() != 1 || bv.cols() != wv.cols()) shape_error("affine", wv, bv);
  Matrix out(xv.rows(), wv.cols());
  out.noalias() = xv * wv;
  out.rowwise() += bv.row(0);
  const Var in[] = {x, w, b};
  return t.record(std::move(out), std::span<const Var>(in), [x, w, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(x)) {
      Matrix gx(g.rows(), w.value().rows());
      gx.noalias() = g * w.value().transpose();
      tp.accumulate(x, std::move(gx));
    }
    if (tp.needs_grad(w)) tp.grad_slot(w).noalias() += x.value().transpose() * g;
    if (tp.needs_grad(b)) tp.grad_slot(b) += g.colwise().sum();
  });
}

Var affine_relu(const Var& x, const Var& w, const Var& b) {
  if (g_active_log != nullptr) return relu(affine(x, w, b));
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != wv.rows()) shape_error("affine_relu", xv, wv);
  if (bv.rows() != 1 || bv.cols() != wv.cols()) shape_error("affine_relu", wv, bv);
  Matrix out(xv.rows(), wv.cols());
  out.noalias() = xv * wv;
  out.rowwise() += bv.row(0);
  out = out.cwiseMax(0.0);
  const int self = static_cast<int>(t.size());
  const Var in[] = {x, w, b};
  return t.record(std::move(out), std::span<const Var>(in), [x, w, b, self](Tape& tp, const Matrix& g) {
    const Matrix gp = (tp.value_of(self).array() > 0.0).select(g, 0.0);
    if (tp.needs_grad(x)) {
      Matrix gx(gp.rows(), w.value().rows());
      gx.noalias() = gp * w.value().transpose();
      tp.accumulate(x, std::move(gx));
    }
    if (tp.needs_grad(w)) tp.grad_slot(w).noalias() += x.value().transpose() * gp;
    if (tp.needs_grad(b)) tp.grad_slot(b) += gp.colwise().sum();
  });
}

Var add_row(const Var& x, const Var& row) {
  Tape& t = tape_of(x, row);
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) shape_error("add_row", xv, rv);
  Matrix out = xv.rowwise() + rv.row(0);
  return t.record(std::move(out), {x, row}, [x, row](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (tp.needs_grad(row)) tp.grad_slot(row) += g.colwise().sum();
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  Tape& t = tape_of(a);
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean: empty operand");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return t.record(std::move(out), {a}, [a, n](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var sum_rows(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().rowwise().sum();
  return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    Matrix ga = g.replicate(1, a.cols());
    tp.accumulate(a, std::move(ga));
  });
}

Var softmax(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      out(r, c) = std::exp(av(r, c) - m);
      z += out(r, c);
    }
    out.row(r) /= z;
  }
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value_of(self);
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    tp.accumulate(a, std::move(ga));
  });
}

Var normalize_rows(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix sums = av.rowwise().sum();
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) out.row(r) = av.row(r) / sums(r, 0);
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [a, self, sums](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value_of(self);
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r) = ((g.row(r).array() - dot) / sums(r, 0)).matrix();
    }
    tp.accumulate(a, std::move(ga));
  });
}

Var scale_rows(const Var& m, const Var& col) {
  Tape& t = tape_of(m, col);
  const Matrix& mv = m.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != mv.rows()) shape_error("scale_rows", mv, cv);
  Matrix out(mv.rows(), mv.cols());
  for (Eigen::Index r = 0; r < mv.rows(); ++r) out.row(r) = mv.row(r) * cv(r, 0);
  return t.record(std::move(out), {m, col}, [m, col](Tape& tp, const Matrix& g) {
    const Matrix& mv = m.value();
    const Matrix& cv = col.value();
    if (tp.needs_grad(m)) {
      Matrix gm(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) gm.row(r) = g.row(r) * cv(r, 0);
      tp.accumulate(m, std::move(gm));
    }
    if (tp.needs_grad(col)) {
      Matrix gc(cv.rows(), 1);
      for (Eigen::Index r = 0; r < g.rows(); ++r) gc(r, 0) = g.row(r).dot(mv.row(r));
      tp.accumulate(col, std::move(gc));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = tape_of(parts.front());
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat_rows: operands on different tapes");
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!tp.needs_grad(inputs[i])) continue;
      tp.grad_slot(inputs[i]) += g.middleRows(offsets[i], inputs[i].rows());
    }
  });
}

// ---------------------------------------------------------------- indexing

Var gather(const Var& a, std::vector<int> flat_index) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(flat_index.size()), 1);
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    const int k = flat_index[i];
    if (k < 0 || k >= av.size()) throw ShapeError("gather: index out of range");
    out(static_cast<Eigen::Index>(i), 0) = av.data()[k];
  }
  return t.record(std::move(out), {a}, [a, idx = std::move(flat_index)](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_slot(a);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.data()[idx[i]] += g(static_cast<Eigen::Index>(i), 0);
  });
}

namespace {

// d/dx_k of prod_j x_j, for every k, via prefix/suffix products (zero-safe).
void leave_one_out_products(const std::vector<double>& x, std::vector<double>& out) {
  const std::size_t n = x.size();
  out.assign(n, 1.0);
  double prefix = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = prefix;
    prefix *= x[k];
  }
  double suffix = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    out[k] *= suffix;
    suffix *= x[k];
  }
}

}  // namespace

Var gather_prod(const Var& a, std::vector<std::vector<int>> lists) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(lists.size()), 1);
  for (std::size_t i = 0; i < lists.size(); ++i) {
    double p = 1.0;
    for (int k : lists[i]) {
      if (k < 0 || k >= av.size()) throw ShapeError("gather_prod: index out of range");
      p *= av.data()[k];
    }
    out(static_cast<Eigen::Index>(i), 0) = p;
  }
  return t.record(std::move(out), {a}, [a, lists = std::move(lists)](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix& ga = tp.grad_slot(a);
    std::vector<double> xs;
    std::vector<double> loo;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      const double gi = g(static_cast<Eigen::Index>(i), 0);
      if (gi == 0.0) continue;
      xs.clear();
      for (int k : lists[i]) xs.push_back(av.data()[k]);
      leave_one_out_products(xs, loo);
      for (std::size_t j = 0; j < lists[i].size(); ++j) ga.data()[lists[i][j]] += gi * loo[j];
    }
  });
}

Var segment_noisy_or(const Var& a, std::vector<int> segment, int num_segments) {
  const Matrix& av = a.value();
  if (av.cols() != 1 || static_cast<std::size_t>(av.rows()) != segment.size()) {
    throw ShapeError("segment_noisy_or: expected a column with one segment id per row");
  }
  std::vector<std::vector<int>> lists(static_cast<std::size_t>(num_segments));
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || segment[i] >= num_segments) throw ShapeError("segment_noisy_or: bad segment id");
    lists[static_cast<std::size_t>(segment[i])].push_back(static_cast<int>(i));
  }
  Tape& t = tape_of(a);
  Matrix out(num_segments, 1);
  for (int s = 0; s < num_segments; ++s) {
    double keep = 1.0;
    for (int i : lists[static_cast<std::size_t>(s)]) keep *= 1.0 - av(i, 0);
    out(s, 0) = 1.0 - keep;
  }
  return t.record(std::move(out), {a}, [a, lists = std::move(lists)](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix& ga = tp.grad_slot(a);
    std::vector<double> xs;
    std::vector<double> loo;
    for (std::size_t s = 0; s < lists.size(); ++s) {
      xs.clear();
      for (int i : lists[s]) xs.push_back(1.0 - av(i, 0));
      leave_one_out_products(xs, loo);
      for (std::size_t j = 0; j < lists[s].size(); ++j) {
        ga(lists[s][j], 0) += g(static_cast<Eigen::Index>(s), 0) * loo[j];
      }
    }
  });
}

Var gather_noisy_or(const Var& a, std::vector<std::vector<int>> lists, int rows, int cols) {
  Tape& t = tape_of(a);
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != lists.size()) {
    throw ShapeError("gather_noisy_or: list count does not match the output shape");
  }
  const Matrix& av = a.value();
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < lists.size(); ++k) {
    const auto& l = lists[k];
    for (int j : l) {
      if (j < 0 || j >= av.size()) throw ShapeError("gather_noisy_or: index out of range");
    }
    double v = 0.0;
    if (l.size() == 1) {
      v = av.data()[l[0]];
    } else if (!l.empty()) {
      double keep = 1.0;
      for (int j : l) keep *= 1.0 - av.data()[j];
      v = 1.0 - keep;
    }
    out.data()[k] = v;
  }
  return t.record(std::move(out), {a}, [a, lists = std::move(lists)](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix& ga = tp.grad_slot(a);
    std::vector<double> xs;
    std::vector<double> loo;
    for (std::size_t k = 0; k < lists.size(); ++k) {
      const auto& l = lists[k];
      if (l.empty()) continue;
      const double gk = g.data()[k];
      if (l.size() == 1) {
        ga.data()[l[0]] += gk;
        continue;
      }
      xs.clear();
      for (int j : l) xs.push_back(1.0 - av.data()[j]);
      leave_one_out_products(xs, loo);
      for (std::size_t j = 0; j < l.size(); ++j) ga.data()[l[j]] += gk * loo[j];
    }
  });
}

}  // namespace grail::ad
