#include <cctype>
#include <sstream>

#include "mbatch/ir.hpp"

namespace mbatch {
namespace ir {

// --------------------------------------------------------------------------
// Types

TypePtr Type::tensor(int rows, int cols) {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kTensor;
  t->shape = Shape{rows, cols};
  return t;
}
TypePtr Type::scalar_int() {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kScalarInt;
  return t;
}
TypePtr Type::scalar_float() {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kScalarFloat;
  return t;
}
TypePtr Type::list(TypePtr elem) {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kList;
  t->elem = std::move(elem);
  return t;
}
TypePtr Type::tuple(std::vector<TypePtr> elems) {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kTuple;
  t->elems = std::move(elems);
  return t;
}
TypePtr Type::adt(std::string name) {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kAdt;
  t->adt_name = std::move(name);
  return t;
}
TypePtr Type::var(int id) {
  auto t = std::make_shared<Type>();
  t->kind = Kind::kVar;
  t->var_id = id;
  return t;
}

bool type_equal(const TypePtr& a, const TypePtr& b) {
  if (!a || !b) return a == b;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case Type::Kind::kTensor: return a->shape == b->shape;
    case Type::Kind::kScalarInt:
    case Type::Kind::kScalarFloat: return true;
    case Type::Kind::kList: return type_equal(a->elem, b->elem);
    case Type::Kind::kTuple: {
      if (a->elems.size() != b->elems.size()) return false;
      for (size_t i = 0; i < a->elems.size(); ++i)
        if (!type_equal(a->elems[i], b->elems[i])) return false;
      return true;
    }
    case Type::Kind::kAdt: return a->adt_name == b->adt_name;
    case Type::Kind::kVar: return a->var_id == b->var_id;
  }
  return false;
}

std::string type_str(const TypePtr& t) {
  if (!t) return "<none>";
  switch (t->kind) {
    case Type::Kind::kTensor: {
      std::ostringstream os;
      os << "Tensor[(" << t->shape.rows << ", " << t->shape.cols << ")]";
      return os.str();
    }
    case Type::Kind::kScalarInt: return "int";
    case Type::Kind::kScalarFloat: return "float";
    case Type::Kind::kList: return "List[" + type_str(t->elem) + "]";
    case Type::Kind::kTuple: {
      std::string s = "(";
      for (size_t i = 0; i < t->elems.size(); ++i) {
        if (i) s += ", ";
        s += type_str(t->elems[i]);
      }
      return s + ")";
    }
    case Type::Kind::kAdt: return t->adt_name;
    case Type::Kind::kVar: return "'t" + std::to_string(t->var_id);
  }
  return "?";
}

// --------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok {
  kEof, kIdent, kAtIdent, kInt, kFloat,
  kLParen, kRParen, kLBrace, kRBrace, kLBracket, kRBracket,
  kComma, kSemi, kColon, kDot, kArrow, kFatArrow,
  kPlus, kMinus, kStar, kEq, kEqEq, kNe, kLt, kLe, kGt, kGe,
};

struct Token {
  Tok kind;
  std::string text;
  long ival = 0;
  double fval = 0.0;
  int line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }
  const Token& peek() const { return tok_; }
  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    skip_ws();
    tok_ = Token{Tok::kEof, "", 0, 0.0, line_, col_};
    if (pos_ >= src_.size()) return;
    char c = src_[pos_];
    int line = line_, col = col_;
    auto mk = [&](Tok k, const std::string& s) {
      tok_ = Token{k, s, 0, 0.0, line, col};
    };
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        take();
      mk(Tok::kIdent, src_.substr(start, pos_ - start));
      return;
    }
    if (c == '@') {
      take();
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        take();
      if (pos_ == start) throw ParseError("expected identifier after '@'", line, col);
      mk(Tok::kAtIdent, src_.substr(start, pos_ - start));
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) take();
      bool is_float = false;
      if (pos_ < src_.size() && src_[pos_] == '.' && pos_ + 1 < src_.size() &&
          std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
        is_float = true;
        take();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) take();
      }
      std::string text = src_.substr(start, pos_ - start);
      if (is_float) {
        mk(Tok::kFloat, text);
        tok_.fval = std::stod(text);
      } else {
        mk(Tok::kInt, text);
        tok_.ival = std::stol(text);
      }
      return;
    }
    take();
    switch (c) {
      case '(': mk(Tok::kLParen, "("); return;
      case ')': mk(Tok::kRParen, ")"); return;
      case '{': mk(Tok::kLBrace, "{"); return;
      case '}': mk(Tok::kRBrace, "}"); return;
      case '[': mk(Tok::kLBracket, "["); return;
      case ']': mk(Tok::kRBracket, "]"); return;
      case ',': mk(Tok::kComma, ","); return;
      case ';': mk(Tok::kSemi, ";"); return;
      case ':': mk(Tok::kColon, ":"); return;
      case '.': mk(Tok::kDot, "."); return;
      case '+': mk(Tok::kPlus, "+"); return;
      case '*': mk(Tok::kStar, "*"); return;
      case '-':
        if (pos_ < src_.size() && src_[pos_] == '>') {
          take();
          mk(Tok::kArrow, "->");
        } else {
          mk(Tok::kMinus, "-");
        }
        return;
      case '=':
        if (pos_ < src_.size() && src_[pos_] == '=') {
          take();
          mk(Tok::kEqEq, "==");
        } else if (pos_ < src_.size() && src_[pos_] == '>') {
          take();
          mk(Tok::kFatArrow, "=>");
        } else {
          mk(Tok::kEq, "=");
        }
        return;
      case '!':
        if (pos_ < src_.size() && src_[pos_] == '=') {
          take();
          mk(Tok::kNe, "!=");
          return;
        }
        throw ParseError("unexpected '!'", line, col);
      case '<':
        if (pos_ < src_.size() && src_[pos_] == '=') {
          take();
          mk(Tok::kLe, "<=");
        } else {
          mk(Tok::kLt, "<");
        }
        return;
      case '>':
        if (pos_ < src_.size() && src_[pos_] == '=') {
          take();
          mk(Tok::kGe, ">=");
        } else {
          mk(Tok::kGt, ">");
        }
        return;
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
  }

  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') take();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        take();
      } else {
        break;
      }
    }
  }

  void take() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
  Token tok_;
};

// --------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(const std::string& src) : lex_(src) {}

  Program parse() {
    bool any = false;
    while (lex_.peek().kind != Tok::kEof) {
      any = true;
      const Token& t = lex_.peek();
      if (t.kind == Tok::kIdent && t.text == "def") {
        parse_funcdef();
      } else if (t.kind == Tok::kIdent && t.text == "data") {
        parse_datadef();
      } else {
        throw ParseError("expected definition", t.line, t.col);
      }
    }
    if (!any) throw ParseError("expected definition", 1, 1);
    if (!prog_.functions.count("main"))
      throw ParseError("missing @main definition", 1, 1);
    collect_params();
    collect_concurrent_groups();
    for (const auto& [fname, fd] : prog_.functions) check_callees(fd.body);
    return std::move(prog_);
  }

 private:
  Token expect(Tok kind, const std::string& what) {
    if (lex_.peek().kind != kind)
      throw ParseError("expected " + what + ", got '" + lex_.peek().text + "'",
                       lex_.peek().line, lex_.peek().col);
    return lex_.next();
  }
  bool accept(Tok kind) {
    if (lex_.peek().kind == kind) {
      lex_.next();
      return true;
    }
    return false;
  }
  bool peek_ident(const std::string& s) {
    return lex_.peek().kind == Tok::kIdent && lex_.peek().text == s;
  }
  void expect_ident(const std::string& s) {
    if (!peek_ident(s))
      throw ParseError("expected '" + s + "'", lex_.peek().line, lex_.peek().col);
    lex_.next();
  }

  ExprPtr mk(Expr::Kind k, int line, int col) {
    auto e = std::make_shared<Expr>();
    e->kind = k;
    e->id = prog_.next_expr_id++;
    e->line = line;
    e->col = col;
    return e;
  }

  void parse_datadef() {
    lex_.next();  // data
    Token name = expect(Tok::kIdent, "datatype name");
    if (prog_.datatypes.count(name.text))
      throw ParseError("duplicate definition of '" + name.text + "'", name.line, name.col);
    DataDef dd;
    dd.name = name.text;
    expect(Tok::kLBrace, "'{'");
    while (true) {
      Token cname = expect(Tok::kIdent, "constructor name");
      DataCtor ctor;
      ctor.name = cname.text;
      if (accept(Tok::kLParen)) {
        if (lex_.peek().kind != Tok::kRParen) {
          ctor.fields.push_back(parse_type());
          while (accept(Tok::kComma)) ctor.fields.push_back(parse_type());
        }
        expect(Tok::kRParen, "')'");
      }
      dd.ctors.push_back(std::move(ctor));
      if (!accept(Tok::kComma)) break;
    }
    expect(Tok::kRBrace, "'}'");
    prog_.datatypes[dd.name] = std::move(dd);
  }

  void parse_funcdef() {
    lex_.next();  // def
    Token name = expect(Tok::kAtIdent, "function name");
    if (prog_.functions.count(name.text))
      throw ParseError("duplicate definition of '@" + name.text + "'", name.line, name.col);
    FuncDef fd;
    fd.name = name.text;
    current_func_ = name.text;
    expect(Tok::kLParen, "'('");
    if (lex_.peek().kind != Tok::kRParen) {
      do {
        bool is_input = false;
        if (peek_ident("input")) {
          lex_.next();
          is_input = true;
        }
        Token pname = expect(Tok::kIdent, "parameter name");
        TypePtr pt;
        if (accept(Tok::kColon)) pt = parse_type();
        fd.param_names.push_back(pname.text);
        fd.param_types.push_back(pt);
        param_inputs_[fd.name].push_back(is_input);
      } while (accept(Tok::kComma));
    }
    expect(Tok::kRParen, "')'");
    if (accept(Tok::kArrow)) fd.ret_type = parse_type();
    fd.body = parse_block(fd.name == "main" ? &fd : nullptr);
    current_func_.clear();
    prog_.functions[fd.name] = std::move(fd);
  }

  TypePtr parse_type() {
    const Token& t = lex_.peek();
    if (t.kind == Tok::kIdent && t.text == "Tensor") {
      lex_.next();
      expect(Tok::kLBracket, "'['");
      expect(Tok::kLParen, "'('");
      Token r = expect(Tok::kInt, "row count");
      expect(Tok::kComma, "','");
      Token c = expect(Tok::kInt, "column count");
      expect(Tok::kRParen, "')'");
      expect(Tok::kRBracket, "']'");
      if (r.ival <= 0 || c.ival <= 0)
        throw ParseError("tensor dimensions must be positive", r.line, r.col);
      return Type::tensor(static_cast<int>(r.ival), static_cast<int>(c.ival));
    }
    if (t.kind == Tok::kIdent && t.text == "List") {
      lex_.next();
      expect(Tok::kLBracket, "'['");
      TypePtr elem = parse_type();
      expect(Tok::kRBracket, "']'");
      return Type::list(elem);
    }
    if (t.kind == Tok::kIdent && t.text == "int") {
      lex_.next();
      return Type::scalar_int();
    }
    if (t.kind == Tok::kIdent && t.text == "float") {
      lex_.next();
      return Type::scalar_float();
    }
    if (t.kind == Tok::kLParen) {
      lex_.next();
      std::vector<TypePtr> elems;
      elems.push_back(parse_type());
      while (accept(Tok::kComma)) elems.push_back(parse_type());
      expect(Tok::kRParen, "')'");
      if (elems.size() == 1) return elems[0];
      return Type::tuple(std::move(elems));
    }
    if (t.kind == Tok::kIdent) {
      Token n = lex_.next();
      return Type::adt(n.text);
    }
    throw ParseError("expected type", t.line, t.col);
  }

  // A block is `{ (let ... ; | set_phase(k);)* expr }`. Phase markers are
  // only recorded for @main's top-level block.
  ExprPtr parse_block(FuncDef* main_fd) {
    expect(Tok::kLBrace, "'{'");
    return parse_block_body(main_fd);
  }

  ExprPtr parse_block_body(FuncDef* main_fd) {
    struct Binding {
      std::string var;
      ExprPtr bound;
      int line, col;
    };
    std::vector<Binding> lets;
    int stage_index = 0;
    std::optional<int> pending_phase;
    auto flush_phase = [&]() {
      if (pending_phase && main_fd) {
        Annotation a;
        a.kind = Annotation::Kind::kPhase;
        a.phase = *pending_phase;
        a.stage_index = stage_index;
        main_fd->annotations.push_back(a);
        pending_phase.reset();
      }
    };
    while (true) {
      if (peek_ident("let")) {
        Token lt = lex_.next();
        Token v = expect(Tok::kIdent, "binding name");
        expect(Tok::kEq, "'='");
        ExprPtr bound = parse_expr();
        expect(Tok::kSemi, "';'");
        flush_phase();
        lets.push_back({v.text, bound, lt.line, lt.col});
        ++stage_index;
        continue;
      }
      if (peek_ident("set_phase")) {
        Token sp = lex_.next();
        expect(Tok::kLParen, "'('");
        Token k = expect(Tok::kInt, "phase number");
        expect(Tok::kRParen, "')'");
        expect(Tok::kSemi, "';'");
        if (!main_fd)
          throw ParseError("set_phase is only allowed at the top level of @main",
                           sp.line, sp.col);
        if (pending_phase)
          throw ParseError("two phase annotations on one stage", sp.line, sp.col);
        pending_phase = static_cast<int>(k.ival);
        continue;
      }
      break;
    }
    ExprPtr result = parse_expr();
    flush_phase();
    expect(Tok::kRBrace, "'}'");
    // Fold lets right-to-left.
    for (auto it = lets.rbegin(); it != lets.rend(); ++it) {
      auto let = mk(Expr::Kind::kLet, it->line, it->col);
      let->var = it->var;
      let->bound = it->bound;
      let->body = result;
      result = let;
    }
    return result;
  }

  ExprPtr parse_expr() { return parse_cmp(); }

  ExprPtr parse_cmp() {
    ExprPtr lhs = parse_addsub();
    const Token& t = lex_.peek();
    std::string op;
    switch (t.kind) {
      case Tok::kEqEq: op = "=="; break;
      case Tok::kNe: op = "!="; break;
      case Tok::kLt: op = "<"; break;
      case Tok::kLe: op = "<="; break;
      case Tok::kGt: op = ">"; break;
      case Tok::kGe: op = ">="; break;
      default: return lhs;
    }
    Token ot = lex_.next();
    ExprPtr rhs = parse_addsub();
    auto e = mk(Expr::Kind::kScalarBin, ot.line, ot.col);
    e->sbin_op = op;
    e->args = {lhs, rhs};
    return e;
  }

  ExprPtr parse_addsub() {
    ExprPtr lhs = parse_mul();
    while (lex_.peek().kind == Tok::kPlus || lex_.peek().kind == Tok::kMinus) {
      Token ot = lex_.next();
      ExprPtr rhs = parse_mul();
      if (ot.kind == Tok::kPlus) {
        // '+' is tensor add or scalar add; resolved during type inference.
        auto e = mk(Expr::Kind::kPrimOp, ot.line, ot.col);
        e->op = OpCode::kAdd;
        e->args = {lhs, rhs};
        lhs = e;
      } else {
        auto e = mk(Expr::Kind::kScalarBin, ot.line, ot.col);
        e->sbin_op = "-";
        e->args = {lhs, rhs};
        lhs = e;
      }
    }
    return lhs;
  }

  ExprPtr parse_mul() {
    ExprPtr lhs = parse_postfix();
    while (lex_.peek().kind == Tok::kStar) {
      Token ot = lex_.next();
      ExprPtr rhs = parse_postfix();
      auto e = mk(Expr::Kind::kPrimOp, ot.line, ot.col);
      e->op = OpCode::kMul;
      e->args = {lhs, rhs};
      lhs = e;
    }
    return lhs;
  }

  ExprPtr parse_postfix() {
    ExprPtr e = parse_primary();
    while (lex_.peek().kind == Tok::kDot) {
      Token dt = lex_.next();
      Token idx = expect(Tok::kInt, "projection index");
      auto p = mk(Expr::Kind::kProject, dt.line, dt.col);
      p->tuple_e = e;
      p->proj_index = static_cast<int>(idx.ival);
      e = p;
    }
    return e;
  }

  std::vector<ExprPtr> parse_args() {
    std::vector<ExprPtr> args;
    expect(Tok::kLParen, "'('");
    if (lex_.peek().kind != Tok::kRParen) {
      args.push_back(parse_expr());
      while (accept(Tok::kComma)) args.push_back(parse_expr());
    }
    expect(Tok::kRParen, "')'");
    return args;
  }

  ExprPtr parse_unary_prim(OpCode op, const Token& t) {
    auto args = parse_args();
    if (args.size() != 1)
      throw ParseError(std::string(backend::op_name(op)) + " takes one argument", t.line, t.col);
    auto e = mk(Expr::Kind::kPrimOp, t.line, t.col);
    e->op = op;
    e->args = std::move(args);
    return e;
  }

  ExprPtr parse_primary() {
    const Token& t = lex_.peek();
    switch (t.kind) {
      case Tok::kInt: {
        Token n = lex_.next();
        auto e = mk(Expr::Kind::kScalarLit, n.line, n.col);
        e->slit_int = n.ival;
        return e;
      }
      case Tok::kFloat: {
        Token n = lex_.next();
        auto e = mk(Expr::Kind::kScalarLit, n.line, n.col);
        e->slit_is_float = true;
        e->slit_float = n.fval;
        return e;
      }
      case Tok::kMinus: {
        Token m = lex_.next();
        const Token& n = lex_.peek();
        if (n.kind == Tok::kInt) {
          Token v = lex_.next();
          auto e = mk(Expr::Kind::kScalarLit, m.line, m.col);
          e->slit_int = -v.ival;
          return e;
        }
        if (n.kind == Tok::kFloat) {
          Token v = lex_.next();
          auto e = mk(Expr::Kind::kScalarLit, m.line, m.col);
          e->slit_is_float = true;
          e->slit_float = -v.fval;
          return e;
        }
        throw ParseError("expected numeric literal after '-'", m.line, m.col);
      }
      case Tok::kLParen: {
        lex_.next();
        std::vector<ExprPtr> elems;
        elems.push_back(parse_expr());
        while (accept(Tok::kComma)) elems.push_back(parse_expr());
        expect(Tok::kRParen, "')'");
        if (elems.size() == 1) return elems[0];
        auto e = mk(Expr::Kind::kTuple, t.line, t.col);
        e->args = std::move(elems);
        return e;
      }
      case Tok::kLBrace:
        // Nested block as an expression (e.g. a match arm body).
        return parse_block(nullptr);
      case Tok::kAtIdent: {
        Token name = lex_.next();
        if (name.text == "map" || name.text == "map2") {
          expect(Tok::kLParen, "'('");
          expect_ident("fn");
          auto e = mk(Expr::Kind::kMap, name.line, name.col);
          expect(Tok::kLParen, "'('");
          do {
            Token p = expect(Tok::kIdent, "lambda parameter");
            e->lambda_params.push_back(p.text);
            if (accept(Tok::kColon)) parse_type();  // optional, inferred anyway
          } while (accept(Tok::kComma));
          expect(Tok::kRParen, "')'");
          e->lambda_body = parse_block(nullptr);
          expect(Tok::kComma, "','");
          e->map_lists.push_back(parse_expr());
          if (name.text == "map2") {
            expect(Tok::kComma, "','");
            e->map_lists.push_back(parse_expr());
          }
          expect(Tok::kRParen, "')'");
          size_t want = name.text == "map2" ? 2 : 1;
          if (e->lambda_params.size() != want)
            throw ParseError("@" + name.text + " lambda takes " + std::to_string(want) +
                                 " parameter(s)", name.line, name.col);
          return e;
        }
        auto e = mk(Expr::Kind::kCall, name.line, name.col);
        e->callee = name.text;
        e->args = parse_args();
        e->call_site_id = prog_.next_call_site++;
        if (peek_ident("concurrent")) {
          lex_.next();
          expect(Tok::kLParen, "'('");
          Token g = expect(Tok::kInt, "group id");
          expect(Tok::kRParen, "')'");
          e->concurrent_group = static_cast<int>(g.ival);
        }
        return e;
      }
      case Tok::kIdent: {
        const std::string& w = t.text;
        if (w == "if") {
          Token kw = lex_.next();
          expect(Tok::kLParen, "'('");
          ExprPtr cond = parse_expr();
          expect(Tok::kRParen, "')'");
          ExprPtr then_e = parse_block(nullptr);
          expect_ident("else");
          ExprPtr else_e = parse_block(nullptr);
          auto e = mk(Expr::Kind::kIf, kw.line, kw.col);
          e->cond = cond;
          e->then_e = then_e;
          e->else_e = else_e;
          return e;
        }
        if (w == "match") {
          Token kw = lex_.next();
          expect(Tok::kLParen, "'('");
          ExprPtr scrut = parse_expr();
          expect(Tok::kRParen, "')'");
          expect(Tok::kLBrace, "'{'");
          auto e = mk(Expr::Kind::kMatch, kw.line, kw.col);
          e->scrutinee = scrut;
          while (true) {
            Token cname = expect(Tok::kIdent, "constructor pattern");
            MatchArm arm;
            arm.ctor = cname.text;
            if (accept(Tok::kLParen)) {
              do {
                Token b = expect(Tok::kIdent, "pattern binder");
                arm.binders.push_back(b.text);
              } while (accept(Tok::kComma));
              expect(Tok::kRParen, "')'");
            }
            expect(Tok::kFatArrow, "'=>'");
            arm.body = parse_expr();
            e->arms.push_back(std::move(arm));
            if (!accept(Tok::kComma)) break;
          }
          expect(Tok::kRBrace, "'}'");
          return e;
        }
        if (w == "Nil") {
          Token kw = lex_.next();
          return mk(Expr::Kind::kListNil, kw.line, kw.col);
        }
        if (w == "Cons") {
          Token kw = lex_.next();
          auto args = parse_args();
          if (args.size() != 2) throw ParseError("Cons takes two arguments", kw.line, kw.col);
          auto e = mk(Expr::Kind::kListCons, kw.line, kw.col);
          e->args = std::move(args);
          return e;
        }
        if (w == "fill") {
          Token kw = lex_.next();
          expect(Tok::kLParen, "'('");
          expect(Tok::kLParen, "'('");
          Token r = expect(Tok::kInt, "row count");
          expect(Tok::kComma, "','");
          Token c = expect(Tok::kInt, "column count");
          expect(Tok::kRParen, "')'");
          expect(Tok::kComma, "','");
          bool neg = accept(Tok::kMinus);
          double v;
          if (lex_.peek().kind == Tok::kFloat) v = lex_.next().fval;
          else v = static_cast<double>(expect(Tok::kInt, "fill value").ival);
          if (neg) v = -v;
          expect(Tok::kRParen, "')'");
          auto e = mk(Expr::Kind::kConstTensor, kw.line, kw.col);
          e->const_shape = Shape{static_cast<int>(r.ival), static_cast<int>(c.ival)};
          e->const_value = v;
          return e;
        }
        if (w == "scalar") {
          Token kw = lex_.next();
          auto args = parse_args();
          if (args.size() != 1) throw ParseError("scalar takes one argument", kw.line, kw.col);
          auto e = mk(Expr::Kind::kScalarOf, kw.line, kw.col);
          e->bound = args[0];
          return e;
        }
        if (w == "ghost") {
          Token kw = lex_.next();
          expect(Tok::kLParen, "'('");
          Token k = expect(Tok::kInt, "ghost count");
          expect(Tok::kRParen, "')'");
          auto e = mk(Expr::Kind::kGhost, kw.line, kw.col);
          e->ghost_count = static_cast<int>(k.ival);
          e->ghost_body = parse_block(nullptr);
          return e;
        }
        if (w == "nn") {
          Token kw = lex_.next();
          expect(Tok::kDot, "'.'");
          Token op = expect(Tok::kIdent, "op name");
          if (op.text != "dense")
            throw ParseError("unknown op 'nn." + op.text + "'", op.line, op.col);
          auto args = parse_args();
          if (args.size() != 2)
            throw ParseError("nn.dense takes two arguments", kw.line, kw.col);
          auto e = mk(Expr::Kind::kPrimOp, kw.line, kw.col);
          e->op = OpCode::kDense;
          e->args = std::move(args);
          return e;
        }
        if (w == "sigmoid") return parse_unary_prim(OpCode::kSigmoid, lex_.next());
        if (w == "tanh") return parse_unary_prim(OpCode::kTanh, lex_.next());
        if (w == "relu") return parse_unary_prim(OpCode::kRelu, lex_.next());
        if (w == "argmax") return parse_unary_prim(OpCode::kArgmax, lex_.next());
        if (w == "concat") {
          Token kw = lex_.next();
          auto args = parse_args();
          if (args.size() != 2) throw ParseError("concat takes two arguments", kw.line, kw.col);
          auto e = mk(Expr::Kind::kPrimOp, kw.line, kw.col);
          e->op = OpCode::kConcat;
          e->args = std::move(args);
          return e;
        }
        // Check for a known data constructor applied to arguments.
        for (const auto& [dname, dd] : prog_.datatypes) {
          for (const auto& ctor : dd.ctors) {
            if (ctor.name == w) {
              Token kw = lex_.next();
              auto e = mk(Expr::Kind::kCtor, kw.line, kw.col);
              e->ctor_adt = dname;
              e->ctor_name = w;
              if (lex_.peek().kind == Tok::kLParen) e->args = parse_args();
              return e;
            }
          }
        }
        Token v = lex_.next();
        auto e = mk(Expr::Kind::kVar, v.line, v.col);
        e->var = v.text;
        return e;
      }
      default:
        throw ParseError("expected expression, got '" + t.text + "'", t.line, t.col);
    }
  }

  void collect_params() {
    auto it = prog_.functions.find("main");
    const FuncDef& main_fd = it->second;
    const auto& inputs = param_inputs_["main"];
    for (size_t i = 0; i < main_fd.param_names.size(); ++i) {
      ParamDecl pd;
      pd.name = main_fd.param_names[i];
      pd.type = main_fd.param_types[i];
      if (!pd.type)
        throw ParseError("@main parameters must be type-annotated", 1, 1);
      bool is_input = i < inputs.size() && inputs[i];
      // Lists, datatypes and scalars are per-instance inputs by default.
      if (pd.type->kind == Type::Kind::kList || pd.type->kind == Type::Kind::kAdt ||
          pd.type->is_scalar())
        is_input = true;
      pd.is_instance_input = is_input;
      prog_.params.push_back(std::move(pd));
    }
  }

  void collect_concurrent_groups() {
    for (auto& [fname, fd] : prog_.functions) {
      std::map<int, std::vector<int>> groups;
      collect_groups_rec(fd.body, groups);
      for (auto& [gid, sites] : groups) {
        Annotation a;
        a.kind = Annotation::Kind::kConcurrentCalls;
        a.group_id = gid;
        a.call_site_ids = sites;
        fd.annotations.push_back(a);
      }
    }
  }

  void check_callees(const ExprPtr& e) {
    if (!e) return;
    if (e->kind == Expr::Kind::kCall && !prog_.functions.count(e->callee))
      throw ParseError("unknown identifier '@" + e->callee + "'", e->line, e->col);
    for (const auto& a : e->args) check_callees(a);
    check_callees(e->bound);
    check_callees(e->body);
    check_callees(e->scrutinee);
    for (const auto& arm : e->arms) check_callees(arm.body);
    check_callees(e->cond);
    check_callees(e->then_e);
    check_callees(e->else_e);
    check_callees(e->tuple_e);
    check_callees(e->lambda_body);
    for (const auto& l : e->map_lists) check_callees(l);
    check_callees(e->ghost_body);
  }

  void collect_groups_rec(const ExprPtr& e, std::map<int, std::vector<int>>& groups) {
    if (!e) return;
    if (e->kind == Expr::Kind::kCall && e->concurrent_group)
      groups[*e->concurrent_group].push_back(e->call_site_id);
    for (const auto& a : e->args) collect_groups_rec(a, groups);
    collect_groups_rec(e->bound, groups);
    collect_groups_rec(e->body, groups);
    collect_groups_rec(e->scrutinee, groups);
    for (const auto& arm : e->arms) collect_groups_rec(arm.body, groups);
    collect_groups_rec(e->cond, groups);
    collect_groups_rec(e->then_e, groups);
    collect_groups_rec(e->else_e, groups);
    collect_groups_rec(e->tuple_e, groups);
    collect_groups_rec(e->lambda_body, groups);
    for (const auto& l : e->map_lists) collect_groups_rec(l, groups);
    collect_groups_rec(e->ghost_body, groups);
  }

  Lexer lex_;
  Program prog_;
  std::string current_func_;
  std::map<std::string, std::vector<bool>> param_inputs_;
};

}  // namespace

Program parse_program(const std::string& source_text) { return Parser(source_text).parse(); }

}  // namespace ir
}  // namespace mbatch
