#pragma once

// Grounding of logic programs against scenes and differentiable forward
// inference (product t-norm per clause, noisy-or across groundings).

#include <array>
#include <compare>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "grail/autodiff.hpp"
#include "grail/concepts.hpp"
#include "grail/logic.hpp"
#include "grail/scene.hpp"

namespace grail {

class MissingValuation : public Error {
 public:
  using Error::Error;
};
class MissingStatusFn : public Error {
 public:
  using Error::Error;
};
class MissingAtom : public Error {
 public:
  using Error::Error;
};

/// Argument codes: >= 0 is an object index; kWorldArg is the `world`
/// constant; kSymbolBase - k is class-name symbol k.
inline constexpr int kNoArg = -2;
inline constexpr int kWorldArg = -1;
inline constexpr int kSymbolBase = -10;

struct GroundAtom {
  int pred = -1;
  std::array<int, 2> args{kNoArg, kNoArg};

  auto operator<=>(const GroundAtom&) const = default;
};

std::string format_ground_atom(const GroundAtom& a, const logic::Decls& decls,
                               const std::vector<std::string>& symbols = {});

/// Crisp status value of a predicate for one object (kWorldArg for global
/// or nullary predicates).
using StatusFn = std::function<double(const Scene&, int object)>;
using StatusRegistry = std::map<std::string, StatusFn>;

struct GroundedClause {
  int clause = -1;
  /// Binding per clause variable, in order of first appearance.
  std::vector<int> substitution;
  GroundAtom head;
  /// Body atoms with type atoms removed.
  std::vector<GroundAtom> body;
};

/// Variables of a clause in order of first appearance (head first).
std::vector<std::string> clause_variables(const logic::Clause& c);

std::vector<GroundedClause> ground(const logic::LogicProgram& program, const Scene& scene);

/// Predicates (decl indices) of kind spatial or status used in the program bodies.
std::vector<int> used_state_predicates(const logic::LogicProgram& program);

class GroundAtomTable {
 public:
  enum class Tag { kType, kStatus, kSpatial };
  struct Entry {
    int slot = -1;
    Tag tag = Tag::kStatus;
  };

  int num_scenes() const { return static_cast<int>(index_.size()); }
  /// Column of every atom value across all scenes.
  const ad::Var& values() const { return values_; }
  double value(int scene, const GroundAtom& atom) const;
  const Entry* find(int scene, const GroundAtom& atom) const;
  int slot(int scene, const GroundAtom& atom) const;
  const std::map<GroundAtom, Entry>& atoms(int scene) const { return index_[static_cast<std::size_t>(scene)]; }
  /// Value of type(obj, name): 1 if the object has that type, else 0.
  double type_value(int scene, int object, const std::string& type_name) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::size_t size() const;

 private:
  friend GroundAtomTable evaluate_atoms(ad::Tape&, std::span<const Scene>, const logic::Decls&,
                                        const std::vector<int>&, ValuationMap&, const StatusRegistry&, bool);
  std::vector<std::map<GroundAtom, Entry>> index_;
  std::vector<std::string> symbols_;
  ad::Var values_;
};

/// Evaluates every ground atom of the listed state predicates (decl indices)
/// plus the type atoms, for each scene.  Spatial atoms are differentiable
/// with respect to the valuation nets when `trainable` is set.
GroundAtomTable evaluate_atoms(ad::Tape& tape, std::span<const Scene> scenes, const logic::Decls& decls,
                               const std::vector<int>& predicates, ValuationMap& nets,
                               const StatusRegistry& status, bool trainable);

/// Single-scene form over the predicates used by `program`.
GroundAtomTable evaluate_atoms(ad::Tape& tape, const Scene& scene, const logic::LogicProgram& program,
                               ValuationMap& nets, const StatusRegistry& status, bool trainable = false);

struct HeadValues {
  /// (scene, head atom) per row of `values`.
  std::vector<std::pair<int, GroundAtom>> heads;
  ad::Var values;
};

/// Confidence of each grounding is sigmoid(weights[clause]) times the
/// product of its body atoms; each head atom is the noisy-or of its
/// groundings.  `grounded[s]` are the groundings for scene s.
HeadValues forward_infer(ad::Tape& tape, const GroundAtomTable& table,
                         const std::vector<std::vector<GroundedClause>>& grounded, const ad::Var& weights);

/// Per scene and head predicate (columns in `head_order`, decl indices): the
/// noisy-or over all groundings whose head uses that predicate.  0 where no
/// rule fires.  Result is scenes x heads.
ad::Var head_scores(ad::Tape& tape, const GroundAtomTable& table,
                    const std::vector<std::vector<GroundedClause>>& grounded, const ad::Var& weights,
                    const std::vector<int>& head_order);

inline constexpr double kActionFloor = 1e-8;

/// (score + 1e-8) normalized per row.
ad::Var action_distribution(const ad::Var& scores);
std::vector<double> action_distribution(const std::vector<double>& scores);

/// Precompiled program + declaration bundle used by the agent.
struct CompiledProgram {
  logic::LogicProgram program;
  /// Decl indices of the head predicates, in output column order.
  std::vector<int> head_order;
};

CompiledProgram compile_policy(logic::LogicProgram program);
CompiledProgram compile_blending(logic::LogicProgram program);

}  // namespace grail
