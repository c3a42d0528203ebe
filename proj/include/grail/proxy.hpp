#pragma once

// Closed-form proxy expressions over the offset variables dx, dy.

#include <memory>
#include <string>
#include <string_view>

#include "grail/error.hpp"

namespace grail {

class ProxySyntaxError : public Error {
 public:
  ProxySyntaxError(std::size_t position, const std::string& message);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class UnknownFunction : public Error {
 public:
  using Error::Error;
};

class UnknownVariable : public Error {
 public:
  using Error::Error;
};

/// Result magnitude used for division by zero before the final clamp.
inline constexpr double kProxyDivOverflow = 1e30;

struct ProxyNode;

class ProxyFn {
 public:
  ProxyFn() = default;

  /// Raw expression value (unclamped).
  double raw(double dx, double dy) const;
  /// Expression value clamped to [0, 1]; NaN maps to 0.
  double operator()(double dx, double dy) const;

  const std::string& source() const { return source_; }
  const std::string& predicate() const { return predicate_; }
  void set_predicate(std::string p) { predicate_ = std::move(p); }
  bool valid() const { return root_ != nullptr; }
  /// Number of nodes after constant folding.
  int node_count() const;

 private:
  friend ProxyFn parse_proxy(std::string_view text);
  std::shared_ptr<const ProxyNode> root_;
  std::string source_;
  std::string predicate_;
};

/// Parses one expression; constants are folded.
ProxyFn parse_proxy(std::string_view text);

/// Reads `path` and parses it; the predicate is the file stem.
ProxyFn load_proxy(const std::string& path);

}  // namespace grail
