#include "grail/logic.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace grail::logic {

const char* kind_name(PredKind k) {
  switch (k) {
    case PredKind::kAction: return "action";
    case PredKind::kBlend: return "blend";
    case PredKind::kType: return "type";
    case PredKind::kStatus: return "status";
    case PredKind::kSpatial: return "spatial";
  }
  return "?";
}

namespace {

std::optional<PredKind> kind_from(std::string_view s) {
  if (s == "action") return PredKind::kAction;
  if (s == "blend") return PredKind::kBlend;
  if (s == "type") return PredKind::kType;
  if (s == "status") return PredKind::kStatus;
  if (s == "spatial") return PredKind::kSpatial;
  return std::nullopt;
}

bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident_char(char c) { return is_lower(c) || is_upper(c) || is_digit(c) || c == '_'; }

bool is_constant_name(std::string_view s) {
  if (s.empty() || !is_lower(s[0])) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return is_lower(c) || is_digit(c) || c == '_'; });
}

enum class Tok { kIdent, kLParen, kRParen, kComma, kDot, kNeck, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;
  int line = 1;
  int col = 1;
};

std::string describe(const Token& t) {
  switch (t.kind) {
    case Tok::kIdent: return "'" + t.text + "'";
    case Tok::kLParen: return "'('";
    case Tok::kRParen: return "')'";
    case Tok::kComma: return "','";
    case Tok::kDot: return "'.'";
    case Tok::kNeck: return "':-'";
    case Tok::kEnd: return "end of input";
  }
  return "?";
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) { advance(); }

  const Token& peek() const { return cur_; }

  Token take() {
    Token t = cur_;
    advance();
    return t;
  }

  Token expect(Tok kind, const char* what) {
    if (cur_.kind != kind) throw SyntaxError(cur_.line, cur_.col, what, describe(cur_));
    return take();
  }

 private:
  void bump() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void advance() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        bump();
      } else if (c == '%') {
        while (pos_ < src_.size() && src_[pos_] != '\n') bump();
      } else {
        break;
      }
    }
    cur_ = Token{};
    cur_.line = line_;
    cur_.col = col_;
    if (pos_ >= src_.size()) {
      cur_.kind = Tok::kEnd;
      return;
    }
    const char c = src_[pos_];
    switch (c) {
      case '(': cur_.kind = Tok::kLParen; bump(); return;
      case ')': cur_.kind = Tok::kRParen; bump(); return;
      case ',': cur_.kind = Tok::kComma; bump(); return;
      case '.': cur_.kind = Tok::kDot; bump(); return;
      case ':':
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '-') {
          cur_.kind = Tok::kNeck;
          bump();
          bump();
          return;
        }
        throw SyntaxError(line_, col_, "':-'", "':'");
      default: break;
    }
    if (is_lower(c) || is_upper(c)) {
      const std::size_t start = pos_;
      while (pos_ < src_.size() && is_ident_char(src_[pos_])) bump();
      cur_.kind = Tok::kIdent;
      cur_.text = std::string(src_.substr(start, pos_ - start));
      return;
    }
    std::string found;
    if (static_cast<unsigned char>(c) >= 0x20 && static_cast<unsigned char>(c) < 0x7f) {
      found = std::string("'") + c + "'";
    } else {
      std::ostringstream os;
      os << "byte 0x" << std::hex << static_cast<int>(static_cast<unsigned char>(c));
      found = os.str();
    }
    throw SyntaxError(line_, col_, "identifier or punctuation", found);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  Token cur_;
};

Term parse_term(Lexer& lx) {
  const Token t = lx.expect(Tok::kIdent, "term");
  if (is_upper(t.text[0])) return Term::var(t.text);
  if (!is_constant_name(t.text)) throw SyntaxError(t.line, t.col, "constant [a-z][a-z0-9_]*", "'" + t.text + "'");
  return Term::constant(t.text);
}

Atom parse_atom(Lexer& lx, const char* what) {
  const Token name = lx.expect(Tok::kIdent, what);
  if (!is_constant_name(name.text)) {
    throw SyntaxError(name.line, name.col, "predicate name [a-z][a-z0-9_]*", "'" + name.text + "'");
  }
  Atom a;
  a.predicate = name.text;
  if (lx.peek().kind == Tok::kLParen) {
    lx.take();
    a.args.push_back(parse_term(lx));
    while (lx.peek().kind == Tok::kComma) {
      lx.take();
      a.args.push_back(parse_term(lx));
    }
    lx.expect(Tok::kRParen, "',' or ')'");
  }
  return a;
}

[[noreturn]] void invalid(const Clause& c, const std::string& why) {
  throw ValidationError("clause at line " + std::to_string(c.line) + " `" + format_clause(c) + "`: " + why);
}

void validate_atom(const Clause& c, const Atom& a, const Decls& decls, bool is_head) {
  const PredicateDecl* d = decls.find(a.predicate);
  if (d == nullptr) invalid(c, "undeclared predicate '" + a.predicate + "'");
  if (d->arity() != static_cast<int>(a.args.size())) {
    invalid(c, "predicate '" + a.predicate + "' has arity " + std::to_string(d->arity()) + " but is used with " +
                   std::to_string(a.args.size()) + " argument(s)");
  }
  const bool head_kind = d->kind == PredKind::kAction || d->kind == PredKind::kBlend;
  if (is_head && !head_kind) invalid(c, "head predicate '" + a.predicate + "' is not an action or blend predicate");
  if (!is_head && head_kind) invalid(c, "body uses " + std::string(kind_name(d->kind)) + " predicate '" + a.predicate + "'");
  for (int i = 0; i < d->arity(); ++i) {
    const Term& t = a.args[static_cast<std::size_t>(i)];
    const std::string& slot = d->arg_types[static_cast<std::size_t>(i)];
    if (slot == kConstSlot) {
      if (t.is_var) invalid(c, "argument " + std::to_string(i + 1) + " of '" + a.predicate + "' must be a constant");
    } else if (slot == kWorldSlot) {
      if (!t.is_var && t.name != kWorldConstant) {
        invalid(c, "global argument of '" + a.predicate + "' must be a variable or 'world'");
      }
    } else if (!t.is_var && t.name == kWorldConstant) {
      invalid(c, "'world' used in object argument of '" + a.predicate + "'");
    }
  }
}

void validate_clause(const Clause& c, const Decls& decls) {
  validate_atom(c, c.head, decls, true);
  for (const Atom& b : c.body) validate_atom(c, b, decls, false);

  std::set<std::string> body_vars;
  std::set<std::string> global_vars;
  std::set<std::string> object_vars;
  auto note = [&](const Atom& a, bool in_body) {
    const PredicateDecl* d = decls.find(a.predicate);
    for (std::size_t i = 0; i < a.args.size(); ++i) {
      if (!a.args[i].is_var) continue;
      if (in_body) body_vars.insert(a.args[i].name);
      if (d->global_slot(static_cast<int>(i))) global_vars.insert(a.args[i].name);
      else object_vars.insert(a.args[i].name);
    }
  };
  note(c.head, false);
  for (const Atom& b : c.body) note(b, true);
  for (const std::string& v : global_vars) {
    if (object_vars.count(v)) invalid(c, "variable " + v + " used in both global and object arguments");
  }
  const PredicateDecl* hd = decls.find(c.head.predicate);
  for (std::size_t i = 0; i < c.head.args.size(); ++i) {
    const Term& t = c.head.args[i];
    if (!t.is_var || hd->global_slot(static_cast<int>(i))) continue;
    if (!body_vars.count(t.name)) invalid(c, "head variable " + t.name + " does not appear in the body");
  }
}

}  // namespace

SyntaxError::SyntaxError(int line, int column, std::string expected, std::string found)
    : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) + ": expected " + expected +
            ", found " + found),
      line_(line),
      column_(column),
      expected_(std::move(expected)) {}

void Decls::add(PredicateDecl decl) {
  if (!is_constant_name(decl.name)) throw ConfigError("invalid predicate name '" + decl.name + "'");
  if (index_.count(decl.name)) throw ConfigError("predicate '" + decl.name + "' declared twice");
  if (decl.arity() > 2) throw ConfigError("predicate '" + decl.name + "' has arity above 2");
  if (decl.kind == PredKind::kStatus && decl.arity() > 1) {
    throw ConfigError("status predicate '" + decl.name + "' must have arity 0 or 1");
  }
  if (decl.kind == PredKind::kSpatial) {
    if (decl.arity() != 2) throw ConfigError("spatial predicate '" + decl.name + "' must have arity 2");
    for (const std::string& s : decl.arg_types) {
      if (s == kWorldSlot || s == kConstSlot) throw ConfigError("spatial predicate '" + decl.name + "' needs object slots");
    }
  }
  if (decl.kind == PredKind::kType) {
    if (decl.arity() != 2 || decl.arg_types[1] != kConstSlot || decl.arg_types[0] == kConstSlot) {
      throw ConfigError("type predicate '" + decl.name + "' must be declared as " + decl.name + "(object, const)");
    }
  } else {
    for (const std::string& s : decl.arg_types) {
      if (s == kConstSlot) throw ConfigError("only type predicates may have const slots ('" + decl.name + "')");
    }
  }
  index_[decl.name] = static_cast<int>(list_.size());
  list_.push_back(std::move(decl));
}

const PredicateDecl* Decls::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &list_[static_cast<std::size_t>(it->second)];
}

int Decls::index_of(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::vector<std::string> Decls::actions() const {
  std::vector<std::string> out;
  for (const auto& d : list_) {
    if (d.kind == PredKind::kAction) out.push_back(d.name);
  }
  return out;
}

std::vector<int> Decls::state_predicates() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < list_.size(); ++i) {
    if (list_[i].kind == PredKind::kSpatial || list_[i].kind == PredKind::kStatus) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<std::string> Decls::spatial_names() const {
  std::vector<std::string> out;
  for (const auto& d : list_) {
    if (d.kind == PredKind::kSpatial) out.push_back(d.name);
  }
  return out;
}

Decls parse_decls(std::string_view text) {
  Decls decls;
  Lexer lx(text);
  while (lx.peek().kind != Tok::kEnd) {
    const Token k = lx.expect(Tok::kIdent, "predicate kind");
    const auto kind = kind_from(k.text);
    if (!kind) throw SyntaxError(k.line, k.col, "one of action, blend, type, status, spatial", "'" + k.text + "'");
    const Token name = lx.expect(Tok::kIdent, "predicate name");
    PredicateDecl d;
    d.name = name.text;
    d.kind = *kind;
    if (lx.peek().kind == Tok::kLParen) {
      lx.take();
      d.arg_types.push_back(lx.expect(Tok::kIdent, "argument slot").text);
      while (lx.peek().kind == Tok::kComma) {
        lx.take();
        d.arg_types.push_back(lx.expect(Tok::kIdent, "argument slot").text);
      }
      lx.expect(Tok::kRParen, "',' or ')'");
    }
    try {
      decls.add(std::move(d));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(name.line) + ": " + e.what());
    }
  }
  return decls;
}

bool LogicProgram::same_structure(const LogicProgram& o) const {
  if (clauses.size() != o.clauses.size()) return false;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (!clauses[i].same_structure(o.clauses[i])) return false;
  }
  return true;
}

LogicProgram parse_program(std::string_view text, const Decls& decls) {
  LogicProgram prog;
  prog.decls = decls;
  Lexer lx(text);
  while (lx.peek().kind != Tok::kEnd) {
    Clause c;
    c.line = lx.peek().line;
    c.head = parse_atom(lx, "clause head");
    lx.expect(Tok::kNeck, "':-'");
    c.body.push_back(parse_atom(lx, "body atom"));
    while (lx.peek().kind == Tok::kComma) {
      lx.take();
      c.body.push_back(parse_atom(lx, "body atom"));
    }
    lx.expect(Tok::kDot, "',' or '.'");
    prog.clauses.push_back(std::move(c));
  }
  for (const Clause& c : prog.clauses) validate_clause(c, decls);
  return prog;
}

void check_role(const LogicProgram& program, ProgramRole role) {
  for (const Clause& c : program.clauses) {
    const PredicateDecl* d = program.decls.find(c.head.predicate);
    if (role == ProgramRole::kPolicy && d->kind != PredKind::kAction) {
      invalid(c, "policy program heads must be action predicates");
    }
    if (role == ProgramRole::kBlending) {
      if (d->kind != PredKind::kBlend || (c.head.predicate != "neural_agent" && c.head.predicate != "logic_agent")) {
        invalid(c, "blending program heads must be neural_agent or logic_agent");
      }
    }
  }
}

std::string format_atom(const Atom& a) {
  std::string s = a.predicate;
  if (a.args.empty()) return s;
  s += '(';
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (i) s += ',';
    s += a.args[i].name;
  }
  s += ')';
  return s;
}

std::string format_clause(const Clause& c) {
  std::string s = format_atom(c.head) + " :- ";
  for (std::size_t i = 0; i < c.body.size(); ++i) {
    if (i) s += ", ";
    s += format_atom(c.body[i]);
  }
  return s + ".";
}

std::string pretty_print(const LogicProgram& program) {
  std::string out;
  for (const Clause& c : program.clauses) out += format_clause(c) + "\n";
  return out;
}

}  // namespace grail::logic
