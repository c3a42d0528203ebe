#include "grail/proxy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace grail {

enum class ProxyOp {
  kConst, kDx, kDy, kAdd, kSub, kMul, kDiv, kPow, kNeg,
  kSigmoid, kTanh, kExp, kAbs, kMin, kMax, kClamp01, kGauss
};

struct ProxyNode {
  ProxyOp op = ProxyOp::kConst;
  double value = 0.0;
  std::vector<std::shared_ptr<const ProxyNode>> kids;
};

namespace {

using NodePtr = std::shared_ptr<const ProxyNode>;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double safe_div(double a, double b) {
  if (b == 0.0) {
    if (a == 0.0) return 0.0;
    return a > 0.0 ? kProxyDivOverflow : -kProxyDivOverflow;
  }
  return a / b;
}

double eval(const ProxyNode& n, double dx, double dy) {
  auto k = [&](std::size_t i) { return eval(*n.kids[i], dx, dy); };
  switch (n.op) {
    case ProxyOp::kConst: return n.value;
    case ProxyOp::kDx: return dx;
    case ProxyOp::kDy: return dy;
    case ProxyOp::kAdd: return k(0) + k(1);
    case ProxyOp::kSub: return k(0) - k(1);
    case ProxyOp::kMul: return k(0) * k(1);
    case ProxyOp::kDiv: return safe_div(k(0), k(1));
    case ProxyOp::kPow: return std::pow(k(0), k(1));
    case ProxyOp::kNeg: return -k(0);
    case ProxyOp::kSigmoid: return sigmoid(k(0));
    case ProxyOp::kTanh: return std::tanh(k(0));
    case ProxyOp::kExp: return std::exp(k(0));
    case ProxyOp::kAbs: return std::fabs(k(0));
    case ProxyOp::kMin: return std::min(k(0), k(1));
    case ProxyOp::kMax: return std::max(k(0), k(1));
    case ProxyOp::kClamp01: return std::clamp(k(0), 0.0, 1.0);
    case ProxyOp::kGauss: {
      const double x = k(0);
      const double s = k(1);
      return std::exp(-safe_div(x * x, 2.0 * s * s));
    }
  }
  return 0.0;
}

NodePtr make(ProxyOp op, std::vector<NodePtr> kids) {
  auto n = std::make_shared<ProxyNode>();
  n->op = op;
  n->kids = std::move(kids);
  bool all_const = !n->kids.empty();
  for (const auto& c : n->kids) all_const = all_const && c->op == ProxyOp::kConst;
  if (all_const) {
    auto folded = std::make_shared<ProxyNode>();
    folded->value = eval(*n, 0.0, 0.0);
    return folded;
  }
  return n;
}

NodePtr make_const(double v) {
  auto n = std::make_shared<ProxyNode>();
  n->value = v;
  return n;
}

struct FnInfo {
  const char* name;
  ProxyOp op;
  int arity;
};

constexpr FnInfo kFunctions[] = {
    {"sigmoid", ProxyOp::kSigmoid, 1}, {"tanh", ProxyOp::kTanh, 1}, {"exp", ProxyOp::kExp, 1},
    {"abs", ProxyOp::kAbs, 1},         {"min", ProxyOp::kMin, 2},   {"max", ProxyOp::kMax, 2},
    {"clamp01", ProxyOp::kClamp01, 1}, {"gauss", ProxyOp::kGauss, 2},
};

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  NodePtr parse() {
    NodePtr e = expr();
    skip_ws();
    if (pos_ < s_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  static constexpr int kMaxDepth = 256;

  [[noreturn]] void fail(const std::string& msg) const { throw ProxySyntaxError(pos_, msg); }

  void skip_ws() {
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  struct DepthGuard {
    explicit DepthGuard(Parser& p) : p_(p) {
      if (++p_.depth_ > kMaxDepth) p_.fail("expression nested too deeply");
    }
    ~DepthGuard() { --p_.depth_; }
    Parser& p_;
  };

  // expr := term (('+'|'-') term)*
  NodePtr expr() {
    DepthGuard g(*this);
    NodePtr lhs = term();
    for (;;) {
      if (accept('+')) lhs = make(ProxyOp::kAdd, {lhs, term()});
      else if (accept('-')) lhs = make(ProxyOp::kSub, {lhs, term()});
      else return lhs;
    }
  }

  // term := unary (('*'|'/') unary)*
  NodePtr term() {
    NodePtr lhs = unary();
    for (;;) {
      if (accept('*')) lhs = make(ProxyOp::kMul, {lhs, unary()});
      else if (accept('/')) lhs = make(ProxyOp::kDiv, {lhs, unary()});
      else return lhs;
    }
  }

  // unary := ('-'|'+') unary | power
  NodePtr unary() {
    DepthGuard g(*this);
    if (accept('-')) return make(ProxyOp::kNeg, {unary()});
    if (accept('+')) return unary();
    return power();
  }

  // power := primary ('^' unary)?     (right-associative, binds tighter than unary minus on the left)
  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return make(ProxyOp::kPow, {base, unary()});
    return base;
  }

  NodePtr primary() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return name();
    fail(std::string("unexpected character '") + c + "'");
  }

  NodePtr number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < s_.size() && (s_[p] == '+' || s_[p] == '-')) ++p;
      if (p < s_.size() && std::isdigit(static_cast<unsigned char>(s_[p]))) {
        pos_ = p;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      }
    }
    const std::string lit(s_.substr(start, pos_ - start));
    if (lit == ".") {
      pos_ = start;
      fail("malformed number");
    }
    return make_const(std::strtod(lit.c_str(), nullptr));
  }

  NodePtr name() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    const std::string id(s_.substr(start, pos_ - start));
    skip_ws();
    const bool call = pos_ < s_.size() && s_[pos_] == '(';
    if (!call) {
      if (id == "dx") {
        auto n = std::make_shared<ProxyNode>();
        n->op = ProxyOp::kDx;
        return n;
      }
      if (id == "dy") {
        auto n = std::make_shared<ProxyNode>();
        n->op = ProxyOp::kDy;
        return n;
      }
      throw UnknownVariable("unknown variable '" + id + "' at position " + std::to_string(start) +
                            " (only dx and dy are defined)");
    }
    const FnInfo* fn = nullptr;
    for (const FnInfo& f : kFunctions) {
      if (id == f.name) fn = &f;
    }
    if (fn == nullptr) throw UnknownFunction("unknown function '" + id + "' at position " + std::to_string(start));
    ++pos_;
    std::vector<NodePtr> args;
    if (!accept(')')) {
      args.push_back(expr());
      while (accept(',')) args.push_back(expr());
      expect(')');
    }
    if (static_cast<int>(args.size()) != fn->arity) {
      throw ProxySyntaxError(start, std::string(fn->name) + " takes " + std::to_string(fn->arity) +
                                        " argument(s), got " + std::to_string(args.size()));
    }
    return make(fn->op, std::move(args));
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

int count_nodes(const ProxyNode& n) {
  int c = 1;
  for (const auto& k : n.kids) c += count_nodes(*k);
  return c;
}

}  // namespace

ProxySyntaxError::ProxySyntaxError(std::size_t position, const std::string& message)
    : Error("proxy syntax error at position " + std::to_string(position) + ": " + message), position_(position) {}

double ProxyFn::raw(double dx, double dy) const {
  if (!root_) throw Error("evaluating an empty proxy");
  return eval(*root_, dx, dy);
}

double ProxyFn::operator()(double dx, double dy) const {
  const double v = raw(dx, dy);
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, 0.0, 1.0);
}

int ProxyFn::node_count() const { return root_ ? count_nodes(*root_) : 0; }

ProxyFn parse_proxy(std::string_view text) {
  Parser p(text);
  ProxyFn fn;
  fn.root_ = p.parse();
  fn.source_ = std::string(text);
  while (!fn.source_.empty() && std::isspace(static_cast<unsigned char>(fn.source_.back()))) fn.source_.pop_back();
  return fn;
}

ProxyFn load_proxy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open proxy file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  ProxyFn fn;
  try {
    fn = parse_proxy(ss.str());
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  fn.set_predicate(std::filesystem::path(path).stem().string());
  return fn;
}

}  // namespace grail
