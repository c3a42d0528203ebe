#include "grail/reasoner.hpp"

#include <algorithm>
#include <set>

namespace grail {

using logic::Clause;
using logic::Decls;
using logic::LogicProgram;
using logic::PredicateDecl;
using logic::PredKind;

namespace {

int object_from_constant(const std::string& name, int num_objects) {
  if (name.size() < 4 || name.compare(0, 3, "obj") != 0) return kNoArg;
  int v = 0;
  for (std::size_t i = 3; i < name.size(); ++i) {
    if (name[i] < '0' || name[i] > '9') return kNoArg;
    v = v * 10 + (name[i] - '0');
    if (v >= num_objects) return kNoArg;
  }
  return v;
}

bool slot_accepts(const std::string& slot_type, const Object& o) {
  return slot_type == logic::kAnyObject || slot_type == o.type;
}

}  // namespace

std::string format_ground_atom(const GroundAtom& a, const Decls& decls, const std::vector<std::string>& symbols) {
  std::string s = a.pred >= 0 && a.pred < static_cast<int>(decls.size()) ? decls.at(a.pred).name : "?";
  std::vector<std::string> parts;
  for (int arg : a.args) {
    if (arg == kNoArg) continue;
    if (arg == kWorldArg) parts.push_back(logic::kWorldConstant);
    else if (arg >= 0) parts.push_back(object_constant(arg));
    else {
      const int k = kSymbolBase - arg;
      parts.push_back(k >= 0 && k < static_cast<int>(symbols.size()) ? symbols[static_cast<std::size_t>(k)] : "?");
    }
  }
  if (parts.empty()) return s;
  s += '(';
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s + ')';
}

std::vector<std::string> clause_variables(const Clause& c) {
  std::vector<std::string> vars;
  auto add = [&](const logic::Atom& a) {
    for (const auto& t : a.args) {
      if (t.is_var && std::find(vars.begin(), vars.end(), t.name) == vars.end()) vars.push_back(t.name);
    }
  };
  add(c.head);
  for (const auto& b : c.body) add(b);
  return vars;
}

std::vector<int> used_state_predicates(const LogicProgram& program) {
  std::set<int> used;
  for (const Clause& c : program.clauses) {
    for (const auto& b : c.body) {
      const int idx = program.decls.index_of(b.predicate);
      const PredKind k = program.decls.at(idx).kind;
      if (k == PredKind::kSpatial || k == PredKind::kStatus) used.insert(idx);
    }
  }
  return {used.begin(), used.end()};
}

namespace {

struct ClausePlan {
  std::vector<std::string> vars;
  std::vector<bool> global;
  /// Allowed object types per variable (intersection of all constraints);
  /// empty means any type.
  std::vector<std::vector<std::string>> type_constraints;
  int object_vars = 0;
};

ClausePlan plan_clause(const Clause& c, const Decls& decls) {
  ClausePlan p;
  p.vars = clause_variables(c);
  p.global.assign(p.vars.size(), false);
  p.type_constraints.assign(p.vars.size(), {});
  auto var_index = [&](const std::string& n) {
    return static_cast<int>(std::find(p.vars.begin(), p.vars.end(), n) - p.vars.begin());
  };
  auto visit = [&](const logic::Atom& a) {
    const PredicateDecl* d = decls.find(a.predicate);
    for (std::size_t i = 0; i < a.args.size(); ++i) {
      if (!a.args[i].is_var) continue;
      const int v = var_index(a.args[i].name);
      const std::string& slot = d->arg_types[i];
      if (slot == logic::kWorldSlot) p.global[static_cast<std::size_t>(v)] = true;
      else if (slot != logic::kAnyObject && slot != logic::kConstSlot) p.type_constraints[static_cast<std::size_t>(v)].push_back(slot);
    }
    if (d->kind == PredKind::kType && a.args[0].is_var) {
      p.type_constraints[static_cast<std::size_t>(var_index(a.args[0].name))].push_back(a.args[1].name);
    }
  };
  visit(c.head);
  for (const auto& b : c.body) visit(b);
  for (bool g : p.global) p.object_vars += g ? 0 : 1;
  return p;
}

int resolve_term(const logic::Term& t, const ClausePlan& plan, const std::vector<int>& binding, int num_objects) {
  if (t.is_var) {
    const auto it = std::find(plan.vars.begin(), plan.vars.end(), t.name);
    return binding[static_cast<std::size_t>(it - plan.vars.begin())];
  }
  if (t.name == logic::kWorldConstant) return kWorldArg;
  return object_from_constant(t.name, num_objects);
}

}  // namespace

std::vector<GroundedClause> ground(const LogicProgram& program, const Scene& scene) {
  std::vector<GroundedClause> out;
  const Decls& decls = program.decls;
  const int n = static_cast<int>(scene.objects.size());
  for (std::size_t ci = 0; ci < program.clauses.size(); ++ci) {
    const Clause& c = program.clauses[ci];
    const ClausePlan plan = plan_clause(c, decls);
    std::vector<std::vector<int>> domains(plan.vars.size());
    bool empty_domain = false;
    for (std::size_t v = 0; v < plan.vars.size(); ++v) {
      if (plan.global[v]) {
        domains[v] = {kWorldArg};
        continue;
      }
      for (int o = 0; o < n; ++o) {
        const Object& obj = scene.objects[static_cast<std::size_t>(o)];
        bool ok = true;
        for (const std::string& t : plan.type_constraints[v]) ok = ok && slot_accepts(t, obj);
        if (ok) domains[v].push_back(o);
      }
      empty_domain = empty_domain || domains[v].empty();
    }
    if (empty_domain) continue;

    std::vector<int> binding(plan.vars.size(), kNoArg);
    std::vector<std::size_t> cursor(plan.vars.size(), 0);
    const bool distinct = plan.object_vars > 1;

    auto emit = [&]() {
      GroundedClause g;
      g.clause = static_cast<int>(ci);
      g.substitution = binding;
      auto resolve_atom = [&](const logic::Atom& a, GroundAtom& out_atom) {
        out_atom.pred = decls.index_of(a.predicate);
        const PredicateDecl& d = decls.at(out_atom.pred);
        for (std::size_t i = 0; i < a.args.size(); ++i) {
          const int arg = resolve_term(a.args[i], plan, binding, n);
          if (arg == kNoArg) return false;
          const std::string& slot = d.arg_types[i];
          if (arg >= 0 && slot != logic::kWorldSlot && !slot_accepts(slot, scene.objects[static_cast<std::size_t>(arg)])) {
            return false;
          }
          out_atom.args[i] = arg;
        }
        return true;
      };
      if (!resolve_atom(c.head, g.head)) return;
      for (const auto& b : c.body) {
        const PredicateDecl& d = *decls.find(b.predicate);
        if (d.kind == PredKind::kType) {
          const int obj = resolve_term(b.args[0], plan, binding, n);
          if (obj < 0 || scene.objects[static_cast<std::size_t>(obj)].type != b.args[1].name) return;
          continue;
        }
        GroundAtom ga;
        if (!resolve_atom(b, ga)) return;
        g.body.push_back(ga);
      }
      out.push_back(std::move(g));
    };

    // Odometer enumeration over the variable domains.
    const std::size_t nv = plan.vars.size();
    if (nv == 0) {
      emit();
      continue;
    }
    std::size_t depth = 0;
    while (true) {
      if (cursor[depth] >= domains[depth].size()) {
        cursor[depth] = 0;
        binding[depth] = kNoArg;
        if (depth == 0) break;
        --depth;
        ++cursor[depth];
        continue;
      }
      const int cand = domains[depth][cursor[depth]];
      bool clash = false;
      if (distinct && cand >= 0) {
        for (std::size_t k = 0; k < depth; ++k) clash = clash || binding[k] == cand;
      }
      if (clash) {
        ++cursor[depth];
        continue;
      }
      binding[depth] = cand;
      if (depth + 1 == nv) {
        emit();
        ++cursor[depth];
      } else {
        ++depth;
      }
    }
  }
  return out;
}

double GroundAtomTable::value(int scene, const GroundAtom& atom) const {
  const int s = slot(scene, atom);
  return values_.value()(s, 0);
}

const GroundAtomTable::Entry* GroundAtomTable::find(int scene, const GroundAtom& atom) const {
  if (scene < 0 || scene >= num_scenes()) return nullptr;
  const auto& m = index_[static_cast<std::size_t>(scene)];
  auto it = m.find(atom);
  return it == m.end() ? nullptr : &it->second;
}

int GroundAtomTable::slot(int scene, const GroundAtom& atom) const {
  const Entry* e = find(scene, atom);
  if (e == nullptr) {
    throw MissingAtom("ground atom (predicate " + std::to_string(atom.pred) + ") missing from table for scene " +
                      std::to_string(scene));
  }
  return e->slot;
}

double GroundAtomTable::type_value(int scene, int object, const std::string& type_name) const {
  const auto sym = std::find(symbols_.begin(), symbols_.end(), type_name);
  if (sym == symbols_.end()) return 0.0;
  const auto& m = index_[static_cast<std::size_t>(scene)];
  for (const auto& [atom, entry] : m) {
    if (entry.tag == Tag::kType && atom.args[0] == object &&
        atom.args[1] == kSymbolBase - static_cast<int>(sym - symbols_.begin())) {
      return values_.value()(entry.slot, 0);
    }
  }
  return 0.0;
}

std::size_t GroundAtomTable::size() const {
  std::size_t s = 0;
  for (const auto& m : index_) s += m.size();
  return s;
}

GroundAtomTable evaluate_atoms(ad::Tape& tape, std::span<const Scene> scenes, const Decls& decls,
                               const std::vector<int>& predicates, ValuationMap& nets, const StatusRegistry& status,
                               bool trainable) {
  GroundAtomTable table;
  table.index_.resize(scenes.size());

  struct SpatialBlock {
    int pred;
    std::vector<std::pair<int, GroundAtom>> keys;
    std::vector<Offset> offsets;
  };
  std::vector<SpatialBlock> blocks;
  std::vector<std::pair<int, GroundAtom>> crisp_keys;
  std::vector<GroundAtomTable::Tag> crisp_tags;
  std::vector<double> crisp_values;

  int type_pred = -1;
  for (std::size_t i = 0; i < decls.size(); ++i) {
    if (decls.at(static_cast<int>(i)).kind == PredKind::kType) type_pred = static_cast<int>(i);
  }

  for (int p : predicates) {
    const PredicateDecl& d = decls.at(p);
    if (d.kind == PredKind::kSpatial) {
      if (!nets.count(d.name)) throw MissingValuation("no valuation net for spatial predicate '" + d.name + "'");
      blocks.push_back(SpatialBlock{p, {}, {}});
    } else if (d.kind == PredKind::kStatus) {
      if (!status.count(d.name)) throw MissingStatusFn("no status function registered for '" + d.name + "'");
    } else {
      throw Error("predicate '" + d.name + "' is not a state predicate");
    }
  }

  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& sc = scenes[s];
    const int n = static_cast<int>(sc.objects.size());
    if (type_pred >= 0) {
      for (int o = 0; o < n; ++o) {
        const std::string& t = sc.objects[static_cast<std::size_t>(o)].type;
        auto it = std::find(table.symbols_.begin(), table.symbols_.end(), t);
        if (it == table.symbols_.end()) it = table.symbols_.insert(table.symbols_.end(), t);
        GroundAtom a{type_pred, {o, kSymbolBase - static_cast<int>(it - table.symbols_.begin())}};
        crisp_keys.emplace_back(static_cast<int>(s), a);
        crisp_tags.push_back(GroundAtomTable::Tag::kType);
        crisp_values.push_back(1.0);
      }
    }
    std::size_t bi = 0;
    for (int p : predicates) {
      const PredicateDecl& d = decls.at(p);
      if (d.kind == PredKind::kSpatial) {
        SpatialBlock& b = blocks[bi++];
        for (int i = 0; i < n; ++i) {
          const Object& oi = sc.objects[static_cast<std::size_t>(i)];
          if (!slot_accepts(d.arg_types[0], oi)) continue;
          for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const Object& oj = sc.objects[static_cast<std::size_t>(j)];
            if (!slot_accepts(d.arg_types[1], oj)) continue;
            b.keys.emplace_back(static_cast<int>(s), GroundAtom{p, {i, j}});
            b.offsets.push_back(normalized_offset(oi.x, oi.y, oj.x, oj.y, sc.width, sc.height));
          }
        }
        continue;
      }
      const StatusFn& fn = status.at(d.name);
      auto push = [&](int obj) {
        GroundAtom a{p, {kNoArg, kNoArg}};
        if (d.arity() == 1) a.args[0] = obj;
        const double v = fn(sc, obj);
        if (v != 0.0 && v != 1.0) throw Error("status predicate '" + d.name + "' returned a non-crisp value");
        crisp_keys.emplace_back(static_cast<int>(s), a);
        crisp_tags.push_back(GroundAtomTable::Tag::kStatus);
        crisp_values.push_back(v);
      };
      if (d.arity() == 0 || d.global_slot(0)) {
        push(kWorldArg);
      } else {
        for (int o = 0; o < n; ++o) {
          if (slot_accepts(d.arg_types[0], sc.objects[static_cast<std::size_t>(o)])) push(o);
        }
      }
    }
  }

  std::vector<ad::Var> parts;
  int slot = 0;
  for (SpatialBlock& b : blocks) {
    if (b.keys.empty()) continue;
    ad::Matrix x(static_cast<Eigen::Index>(b.offsets.size()), 2);
    for (std::size_t i = 0; i < b.offsets.size(); ++i) {
      x(static_cast<Eigen::Index>(i), 0) = b.offsets[i].dx;
      x(static_cast<Eigen::Index>(i), 1) = b.offsets[i].dy;
    }
    ValuationNet& net = nets.at(decls.at(b.pred).name);
    parts.push_back(net.forward(tape, tape.constant(std::move(x)), trainable));
    for (const auto& [s, atom] : b.keys) {
      table.index_[static_cast<std::size_t>(s)][atom] = GroundAtomTable::Entry{slot++, GroundAtomTable::Tag::kSpatial};
    }
  }
  if (!crisp_values.empty()) {
    ad::Matrix c(static_cast<Eigen::Index>(crisp_values.size()), 1);
    for (std::size_t i = 0; i < crisp_values.size(); ++i) c(static_cast<Eigen::Index>(i), 0) = crisp_values[i];
    parts.push_back(tape.constant(std::move(c)));
    for (std::size_t i = 0; i < crisp_keys.size(); ++i) {
      const auto& [s, atom] = crisp_keys[i];
      table.index_[static_cast<std::size_t>(s)][atom] = GroundAtomTable::Entry{slot++, crisp_tags[i]};
    }
  }
  if (parts.empty()) {
    table.values_ = tape.constant(ad::Matrix::Zero(0, 1));
  } else if (parts.size() == 1) {
    table.values_ = parts.front();
  } else {
    table.values_ = ad::concat_rows(parts);
  }
  return table;
}

GroundAtomTable evaluate_atoms(ad::Tape& tape, const Scene& scene, const LogicProgram& program, ValuationMap& nets,
                               const StatusRegistry& status, bool trainable) {
  return evaluate_atoms(tape, std::span<const Scene>(&scene, 1), program.decls, used_state_predicates(program), nets,
                        status, trainable);
}

namespace {

struct GroundingColumns {
  std::vector<int> clause_of;
  std::vector<std::vector<int>> body_slots;
};

GroundingColumns collect(const GroundAtomTable& table, const std::vector<std::vector<GroundedClause>>& grounded) {
  GroundingColumns g;
  for (std::size_t s = 0; s < grounded.size(); ++s) {
    for (const GroundedClause& gc : grounded[s]) {
      g.clause_of.push_back(gc.clause);
      std::vector<int> slots;
      slots.reserve(gc.body.size());
      for (const GroundAtom& a : gc.body) slots.push_back(table.slot(static_cast<int>(s), a));
      g.body_slots.push_back(std::move(slots));
    }
  }
  return g;
}

ad::Var confidences(const ad::Var& atom_values, const GroundingColumns& g, const ad::Var& weights) {
  for (int c : g.clause_of) {
    if (c < 0 || c >= weights.rows()) throw ShapeError("clause index outside the weight vector");
  }
  ad::Var conf_w = ad::gather(ad::sigmoid(weights), g.clause_of);
  ad::Var body = ad::gather_prod(atom_values, g.body_slots);
  return ad::mul(conf_w, body);
}

}  // namespace

HeadValues forward_infer(ad::Tape& tape, const GroundAtomTable& table,
                         const std::vector<std::vector<GroundedClause>>& grounded, const ad::Var& weights) {
  (void)tape;
  const GroundingColumns g = collect(table, grounded);
  HeadValues hv;
  std::map<std::pair<int, GroundAtom>, int> head_index;
  std::vector<std::vector<int>> lists;
  int k = 0;
  for (std::size_t s = 0; s < grounded.size(); ++s) {
    for (const GroundedClause& gc : grounded[s]) {
      const auto key = std::make_pair(static_cast<int>(s), gc.head);
      auto it = head_index.find(key);
      if (it == head_index.end()) {
        it = head_index.emplace(key, static_cast<int>(hv.heads.size())).first;
        hv.heads.push_back(key);
        lists.emplace_back();
      }
      lists[static_cast<std::size_t>(it->second)].push_back(k++);
    }
  }
  ad::Var conf = confidences(table.values(), g, weights);
  hv.values = ad::gather_noisy_or(conf, std::move(lists), static_cast<int>(hv.heads.size()), 1);
  return hv;
}

ad::Var head_scores(ad::Tape& tape, const GroundAtomTable& table,
                    const std::vector<std::vector<GroundedClause>>& grounded, const ad::Var& weights,
                    const std::vector<int>& head_order) {
  (void)tape;
  const GroundingColumns g = collect(table, grounded);
  const int rows = static_cast<int>(grounded.size());
  const int cols = static_cast<int>(head_order.size());
  std::vector<std::vector<int>> lists(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  int k = 0;
  for (std::size_t s = 0; s < grounded.size(); ++s) {
    for (const GroundedClause& gc : grounded[s]) {
      const auto col = std::find(head_order.begin(), head_order.end(), gc.head.pred) - head_order.begin();
      if (col < cols) lists[s * static_cast<std::size_t>(cols) + static_cast<std::size_t>(col)].push_back(k);
      ++k;
    }
  }
  ad::Var conf = confidences(table.values(), g, weights);
  return ad::gather_noisy_or(conf, std::move(lists), rows, cols);
}

ad::Var action_distribution(const ad::Var& scores) {
  return ad::normalize_rows(ad::add_scalar(scores, kActionFloor));
}

std::vector<double> action_distribution(const std::vector<double>& scores) {
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (double s : scores) z += s + kActionFloor;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] + kActionFloor) / z;
  return out;
}

CompiledProgram compile_policy(LogicProgram program) {
  logic::check_role(program, logic::ProgramRole::kPolicy);
  CompiledProgram cp;
  for (const std::string& a : program.decls.actions()) cp.head_order.push_back(program.decls.index_of(a));
  if (cp.head_order.empty()) throw ConfigError("no action predicates declared");
  cp.program = std::move(program);
  return cp;
}

CompiledProgram compile_blending(LogicProgram program) {
  logic::check_role(program, logic::ProgramRole::kBlending);
  CompiledProgram cp;
  for (const char* h : {"neural_agent", "logic_agent"}) {
    const int idx = program.decls.index_of(h);
    if (idx < 0 || program.decls.at(idx).kind != PredKind::kBlend) {
      throw ConfigError(std::string("blend predicate '") + h + "' must be declared");
    }
    cp.head_order.push_back(idx);
  }
  cp.program = std::move(program);
  return cp;
}

}  // namespace grail
