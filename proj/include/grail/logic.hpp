#pragma once

// Prolog-like rule language: predicate declarations, weighted Horn clauses,
// parsing with positioned errors, validation, and canonical printing.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grail/error.hpp"

namespace grail::logic {

enum class PredKind { kAction, kBlend, kType, kStatus, kSpatial };

const char* kind_name(PredKind k);

/// Argument slot types in a declaration.
inline constexpr const char* kWorldSlot = "world";
inline constexpr const char* kAnyObject = "object";
inline constexpr const char* kConstSlot = "const";
/// Constant bound to global slots during grounding.
inline constexpr const char* kWorldConstant = "world";

struct PredicateDecl {
  std::string name;
  PredKind kind = PredKind::kStatus;
  /// One entry per argument: an object type name, "object" (any type),
  /// "world" (global slot) or "const" (type-predicate class name).
  std::vector<std::string> arg_types;

  int arity() const { return static_cast<int>(arg_types.size()); }
  bool global_slot(int i) const { return arg_types[static_cast<std::size_t>(i)] == kWorldSlot; }
};

class Decls {
 public:
  void add(PredicateDecl decl);
  const PredicateDecl* find(std::string_view name) const;
  int index_of(std::string_view name) const;
  const PredicateDecl& at(int i) const { return list_[static_cast<std::size_t>(i)]; }
  const std::vector<PredicateDecl>& all() const { return list_; }
  std::size_t size() const { return list_.size(); }

  /// Names of kind=action predicates in declaration order.
  std::vector<std::string> actions() const;
  /// Indices of kind=spatial and kind=status predicates in declaration order.
  std::vector<int> state_predicates() const;
  std::vector<std::string> spatial_names() const;

 private:
  std::vector<PredicateDecl> list_;
  std::map<std::string, int, std::less<>> index_;
};

/// Declaration file: one `<kind> <name>(<slot>, ...)` per line, `%` comments.
Decls parse_decls(std::string_view text);

struct Term {
  bool is_var = false;
  std::string name;

  static Term var(std::string n) { return Term{true, std::move(n)}; }
  static Term constant(std::string n) { return Term{false, std::move(n)}; }
  bool operator==(const Term&) const = default;
};

struct Atom {
  std::string predicate;
  std::vector<Term> args;
  bool operator==(const Atom&) const = default;
};

struct Clause {
  Atom head;
  std::vector<Atom> body;
  /// Logit; confidence is sigmoid(weight).
  double weight = 0.0;
  int line = 0;

  /// Head and body equal; weight and source position ignored.
  bool same_structure(const Clause& o) const { return head == o.head && body == o.body; }
};

struct LogicProgram {
  std::vector<Clause> clauses;
  Decls decls;

  bool same_structure(const LogicProgram& o) const;
};

class SyntaxError : public Error {
 public:
  SyntaxError(int line, int column, std::string expected, std::string found);
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& expected() const { return expected_; }

 private:
  int line_;
  int column_;
  std::string expected_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Parses and validates clause text against `decls`.  All weights start at 0.
LogicProgram parse_program(std::string_view text, const Decls& decls);

enum class ProgramRole { kPolicy, kBlending };

/// Checks that every head has the kind required by `role`.
void check_role(const LogicProgram& program, ProgramRole role);

std::string format_atom(const Atom& a);
std::string format_clause(const Clause& c);
/// One clause per line; weights are not part of the text.
std::string pretty_print(const LogicProgram& program);

}  // namespace grail::logic
