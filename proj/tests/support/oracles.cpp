#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace grail::testing {

std::vector<double> brute_force_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                                    const std::vector<std::uint8_t>& dones, const std::vector<double>& bootstrap,
                                    int len, int n_envs, double gamma, double lambda) {
  auto idx = [&](int t, int e) { return static_cast<std::size_t>(t * n_envs + e); };
  auto delta = [&](int t, int e) {
    const double next = dones[idx(t, e)] ? 0.0 : (t + 1 < len ? values[idx(t + 1, e)] : bootstrap[static_cast<std::size_t>(e)]);
    return rewards[idx(t, e)] + gamma * next - values[idx(t, e)];
  };
  std::vector<double> adv(rewards.size(), 0.0);
  for (int e = 0; e < n_envs; ++e) {
    for (int t = 0; t < len; ++t) {
      double sum = 0.0;
      double w = 1.0;
      for (int k = t; k < len; ++k) {
        sum += w * delta(k, e);
        if (dones[idx(k, e)]) break;
        w *= gamma * lambda;
      }
      adv[idx(t, e)] = sum;
    }
  }
  return adv;
}

const logic::Decls& crisp_decls() {
  static const logic::Decls d = logic::parse_decls(
      "action go(world)\n"
      "action pick(object)\n"
      "action push(box)\n"
      "type type(object, const)\n"
      "spatial left_of(object, object)\n"
      "spatial above(object, object)\n"
      "status marked(object)\n"
      "status flag(world)\n");
  return d;
}

namespace {

// One ReLU pair carries +-coord; the output logit is -1e6 * coord, so any
// offset of at least one pixel saturates the sigmoid to exactly 0 or 1.
ValuationNet sign_net(const std::string& name, int coord) {
  ValuationNet net(name);
  auto ps = net.parameters();
  for (ad::Parameter* p : ps) p->value.setZero();
  ps[0]->value(coord, 0) = 1.0;
  ps[0]->value(coord, 1) = -1.0;
  ps[2]->value(0, 0) = 1.0;
  ps[2]->value(1, 1) = 1.0;
  ps[4]->value(0, 0) = -1e6;
  ps[4]->value(1, 0) = 1e6;
  return net;
}

const std::vector<std::string> kCrispTypes = {"ladder", "box", "agent"};

}  // namespace

ValuationMap crisp_nets() {
  ValuationMap m;
  m.emplace("left_of", sign_net("left_of", 0));
  m.emplace("above", sign_net("above", 1));
  return m;
}

const StatusRegistry& crisp_status() {
  static const StatusRegistry reg = {
      {"marked", [](const Scene& s, int o) { return s.attribute("m" + std::to_string(o)); }},
      {"flag", [](const Scene& s, int) { return s.attribute("flag"); }},
  };
  return reg;
}

CrispCase random_crisp_case(Rng& rng) {
  CrispCase c;
  const int n = rng.range(1, 5);
  std::vector<int> xs;
  std::vector<int> ys;
  while (static_cast<int>(xs.size()) < n) {
    const int x = rng.range(5, 155);
    if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
  }
  while (static_cast<int>(ys.size()) < n) {
    const int y = rng.range(5, 205);
    if (std::find(ys.begin(), ys.end(), y) == ys.end()) ys.push_back(y);
  }
  for (int i = 0; i < n; ++i) {
    const std::string type = i == 0 ? "agent" : kCrispTypes[rng.below(2)];
    c.scene.objects.push_back(Object{type, double(xs[i]), double(ys[i]), true, ""});
    c.scene.attributes["m" + std::to_string(i)] = double(rng.below(2));
  }
  c.scene.attributes["flag"] = double(rng.below(2));

  const std::vector<std::string> vars = {"X", "Y", "Z"};
  std::ostringstream text;
  const int clauses = rng.range(1, 8);
  for (int k = 0; k < clauses; ++k) {
    std::vector<std::string> body;
    const int head_kind = static_cast<int>(rng.below(3));
    const int nb = rng.range(1, 3);
    auto var = [&]() { return vars[rng.below(vars.size())]; };
    bool head_var_used = false;
    for (int b = 0; b < nb; ++b) {
      switch (rng.below(5)) {
        case 0: {
          const std::string v = var();
          head_var_used |= v == "X";
          body.push_back("type(" + v + "," + kCrispTypes[rng.below(3)] + ")");
          break;
        }
        case 1:
        case 2: {
          const std::string a = var();
          std::string b2 = var();
          while (b2 == a) b2 = var();
          head_var_used |= a == "X" || b2 == "X";
          body.push_back(std::string(rng.below(2) ? "left_of" : "above") + "(" + a + "," + b2 + ")");
          break;
        }
        case 3: {
          const std::string v = var();
          head_var_used |= v == "X";
          body.push_back("marked(" + v + ")");
          break;
        }
        default: body.push_back("flag(G)"); break;
      }
    }
    std::string head;
    if (head_kind == 0) {
      head = "go(G)";
    } else {
      head = head_kind == 1 ? "pick(X)" : "push(X)";
      if (!head_var_used) body.push_back("marked(X)");
    }
    text << head << " :- ";
    for (std::size_t b = 0; b < body.size(); ++b) text << (b ? ", " : "") << body[b];
    text << ".\n";
  }
  c.program_text = text.str();
  return c;
}

namespace {

bool holds(const logic::Atom& a, const std::map<std::string, int>& bind, const Scene& s) {
  auto obj = [&](const logic::Term& t) { return bind.at(t.name); };
  if (a.predicate == "type") return s.objects[static_cast<std::size_t>(obj(a.args[0]))].type == a.args[1].name;
  if (a.predicate == "marked") return s.attribute("m" + std::to_string(obj(a.args[0]))) == 1.0;
  if (a.predicate == "flag") return s.attribute("flag") == 1.0;
  const Object& p = s.objects[static_cast<std::size_t>(obj(a.args[0]))];
  const Object& q = s.objects[static_cast<std::size_t>(obj(a.args[1]))];
  if (a.predicate == "left_of") return p.x < q.x;
  if (a.predicate == "above") return p.y < q.y;
  throw Error("oracle: unexpected predicate " + a.predicate);
}

}  // namespace

std::set<std::string> boolean_heads(const logic::LogicProgram& program, const Scene& scene) {
  const logic::Decls& decls = program.decls;
  const int n = static_cast<int>(scene.objects.size());
  std::set<std::string> out;
  for (const logic::Clause& c : program.clauses) {
    // Object variables and the slot types they must satisfy.
    std::vector<std::string> ovars;
    std::map<std::string, std::vector<std::string>> slot_types;
    auto scan = [&](const logic::Atom& a) {
      const logic::PredicateDecl* d = decls.find(a.predicate);
      for (std::size_t i = 0; i < a.args.size(); ++i) {
        const std::string& slot = d->arg_types[i];
        if (!a.args[i].is_var || slot == logic::kWorldSlot || slot == logic::kConstSlot) continue;
        if (std::find(ovars.begin(), ovars.end(), a.args[i].name) == ovars.end()) ovars.push_back(a.args[i].name);
        slot_types[a.args[i].name].push_back(slot);
      }
    };
    scan(c.head);
    for (const auto& b : c.body) scan(b);

    std::map<std::string, int> bind;
    std::vector<int> choice(ovars.size(), 0);
    const bool distinct = ovars.size() > 1;
    // Every assignment of objects to the object variables.
    long long total = 1;
    for (std::size_t i = 0; i < ovars.size(); ++i) total *= n;
    for (long long code = 0; code < total; ++code) {
      long long rest = code;
      bool ok = true;
      std::set<int> seen;
      for (std::size_t i = 0; i < ovars.size(); ++i) {
        const int o = static_cast<int>(rest % n);
        rest /= n;
        bind[ovars[i]] = o;
        if (distinct && !seen.insert(o).second) ok = false;
        for (const std::string& t : slot_types[ovars[i]]) {
          if (t != logic::kAnyObject && scene.objects[static_cast<std::size_t>(o)].type != t) ok = false;
        }
      }
      if (!ok) continue;
      bool body = true;
      for (const auto& b : c.body) body = body && holds(b, bind, scene);
      if (!body) continue;
      if (c.head.predicate == "go") out.insert("go(world)");
      else out.insert(c.head.predicate + "(" + object_constant(bind.at(c.head.args[0].name)) + ")");
    }
  }
  return out;
}

CrispResult check_crisp_case(const CrispCase& c) {
  CrispResult res;
  const logic::LogicProgram prog = logic::parse_program(c.program_text, crisp_decls());
  ValuationMap nets = crisp_nets();
  ad::Tape tape;
  GroundAtomTable table = evaluate_atoms(tape, c.scene, prog, nets, crisp_status(), false);
  std::vector<std::vector<GroundedClause>> grounded{ground(prog, c.scene)};
  ad::Var w = tape.constant(ad::Matrix::Constant(static_cast<Eigen::Index>(prog.clauses.size()), 1, 800.0));
  HeadValues hv = forward_infer(tape, table, grounded, w);
  const std::set<std::string> expect = boolean_heads(prog, c.scene);
  std::set<std::string> got;
  for (std::size_t i = 0; i < hv.heads.size(); ++i) {
    const double v = hv.values.at(static_cast<Eigen::Index>(i));
    const std::string name = format_ground_atom(hv.heads[i].second, prog.decls, table.symbols());
    if (v != 0.0 && v != 1.0) {
      res.equal = false;
      res.detail = name + " has non-crisp value " + std::to_string(v);
      return res;
    }
    if (v == 1.0) got.insert(name);
  }
  if (got != expect) {
    res.equal = false;
    std::ostringstream os;
    os << "reasoner {";
    for (const auto& s : got) os << s << ' ';
    os << "} oracle {";
    for (const auto& s : expect) os << s << ' ';
    os << "}";
    res.detail = os.str();
  }
  return res;
}

int scripted_ladder(const Scene& s) {
  using namespace ladder;
  const Object& a = s.objects[static_cast<std::size_t>(s.agent_index())];
  std::vector<const Object*> ladders;
  for (const Object& o : s.objects) {
    if (o.type == "ladder") ladders.push_back(&o);
  }
  const int lvl = std::min(static_cast<int>(s.attribute("level")), static_cast<int>(ladders.size()) - 1);
  const double lx = ladders[static_cast<std::size_t>(lvl)]->x;
  if (std::fabs(a.x - lx) <= kLadderReach) return kUp;
  return a.x < lx ? kRight : kLeft;
}

int scripted_diver(const Scene& s) {
  using namespace diver;
  const Object& a = s.objects[static_cast<std::size_t>(s.agent_index())];
  const double oxygen = s.attribute("oxygen");
  if (s.attribute("carried") >= kFullDivers) return kUpRescue;
  if (oxygen < 0.3) return kUpAir;
  if (a.y <= kSurfaceY && oxygen < 0.99) return kUpAir;
  const Object* best = nullptr;
  double best_d = 1e9;
  for (const Object& o : s.objects) {
    if (o.type != "diver" || !o.visible) continue;
    const double d = std::fabs(o.x - a.x) + std::fabs(o.y - a.y);
    if (d < best_d) {
      best_d = d;
      best = &o;
    }
  }
  if (!best) return kUp;
  if (std::fabs(best->y - a.y) > 2.0) return best->y < a.y ? kUp : kDown;
  return best->x < a.x ? kLeft : kRight;
}

int scripted_slalom(const Scene& s) {
  using namespace slalom;
  const Object& a = s.objects[static_cast<std::size_t>(s.agent_index())];
  double gx = 0.0;
  int flags = 0;
  for (const Object& o : s.objects) {
    if (o.type == "flag") {
      gx += o.x;
      ++flags;
    }
  }
  gx /= std::max(flags, 1);
  const int cur = a.orientation == "left" ? -1 : a.orientation == "right" ? 1 : 0;
  const double d = gx - a.x;
  const int want = d > 3.0 ? 1 : d < -3.0 ? -1 : 0;
  if (want > cur) return kRight;
  if (want < cur) return kLeft;
  return kNoop;
}

int scripted_action(const std::string& env, const Scene& s) {
  if (env == "ladderworld") return scripted_ladder(s);
  if (env == "diverworld") return scripted_diver(s);
  if (env == "slalomworld") return scripted_slalom(s);
  throw Error("no scripted controller for " + env);
}

int ladder_frames_per_goal(double spawn_x) {
  using namespace ladder;
  // Shipped fixture: floors 190/130/70, ladders at x 132/28/132, top 10, snap 12.
  auto walk = [](double from, double to) {
    const double gap = std::fabs(to - from) - kLadderReach;
    return gap <= 0 ? 0 : static_cast<int>(std::ceil(gap / kMoveStep));
  };
  auto climb = [](double bottom, double top) { return static_cast<int>(std::ceil((bottom - top - 12.0) / kClimbStep)); };
  return walk(spawn_x, 132) + climb(190, 130) + walk(132, 28) + climb(130, 70) + walk(28, 132) + climb(70, 10);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string data_dir() { return GRAIL_DATA_DIR; }

std::string scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(GRAIL_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace grail::testing
