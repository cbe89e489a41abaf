#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mbatch/ir.hpp"

namespace mbatch {
namespace ir {

// --------------------------------------------------------------------------
// AST cloning

ExprPtr clone_expr(const ExprPtr& e, Program* fresh_ids) {
  if (!e) return nullptr;
  auto c = std::make_shared<Expr>(*e);
  if (fresh_ids) {
    c->id = fresh_ids->next_expr_id++;
    if (e->kind == Expr::Kind::kCall) c->call_site_id = fresh_ids->next_call_site++;
  }
  for (auto& a : c->args) a = clone_expr(a, fresh_ids);
  c->bound = clone_expr(e->bound, fresh_ids);
  c->body = clone_expr(e->body, fresh_ids);
  c->scrutinee = clone_expr(e->scrutinee, fresh_ids);
  for (auto& arm : c->arms) arm.body = clone_expr(arm.body, fresh_ids);
  c->cond = clone_expr(e->cond, fresh_ids);
  c->then_e = clone_expr(e->then_e, fresh_ids);
  c->else_e = clone_expr(e->else_e, fresh_ids);
  c->tuple_e = clone_expr(e->tuple_e, fresh_ids);
  c->lambda_body = clone_expr(e->lambda_body, fresh_ids);
  for (auto& l : c->map_lists) l = clone_expr(l, fresh_ids);
  c->ghost_body = clone_expr(e->ghost_body, fresh_ids);
  return c;
}

Program clone_program(const Program& p) {
  Program c = p;
  for (auto& [name, fd] : c.functions) fd.body = clone_expr(fd.body, nullptr);
  return c;
}

// --------------------------------------------------------------------------
// Type inference

namespace {

class Infer {
 public:
  explicit Infer(const Program& p) : result_{clone_program(p), {}} {
    result_.expr_types.resize(result_.program.next_expr_id);
  }

  TypedProgram run() {
    Program& prog = result_.program;
    infer_func(prog.entry);
    // Functions unreachable from main still get checked if fully annotated;
    // otherwise they are left alone (analysis reports them as skipped).
    for (auto& [name, fd] : prog.functions) {
      if (func_state_.count(name)) continue;
      bool annotated = true;
      for (const auto& t : fd.param_types) annotated = annotated && t != nullptr;
      if (annotated) infer_func(name);
    }
    // All recorded types must be ground.
    for (auto& t : result_.expr_types)
      if (t) t = resolve_deep(t);
    for (auto& [name, fd] : prog.functions) {
      for (auto& t : fd.param_types)
        if (t) t = resolve_deep(t);
      if (fd.ret_type) fd.ret_type = resolve_deep(fd.ret_type);
    }
    return std::move(result_);
  }

 private:
  using Env = std::map<std::string, TypePtr>;

  TypePtr fresh() { return Type::var(next_var_++); }

  TypePtr resolve(TypePtr t) {
    while (t && t->kind == Type::Kind::kVar) {
      auto it = bindings_.find(t->var_id);
      if (it == bindings_.end()) break;
      t = it->second;
    }
    return t;
  }

  TypePtr resolve_deep(TypePtr t) {
    t = resolve(t);
    if (!t) return t;
    if (t->kind == Type::Kind::kVar)
      throw Error("cannot infer a concrete type (ill-founded recursion on types)");
    if (t->kind == Type::Kind::kList) return Type::list(resolve_deep(t->elem));
    if (t->kind == Type::Kind::kTuple) {
      std::vector<TypePtr> es;
      for (auto& e : t->elems) es.push_back(resolve_deep(e));
      return Type::tuple(std::move(es));
    }
    return t;
  }

  bool occurs(int var_id, const TypePtr& t0) {
    TypePtr t = resolve(t0);
    if (!t) return false;
    if (t->kind == Type::Kind::kVar) return t->var_id == var_id;
    if (t->kind == Type::Kind::kList) return occurs(var_id, t->elem);
    if (t->kind == Type::Kind::kTuple) {
      for (auto& e : t->elems)
        if (occurs(var_id, e)) return true;
    }
    return false;
  }

  void unify(TypePtr a, TypePtr b, const Expr& at) {
    a = resolve(a);
    b = resolve(b);
    if (a->kind == Type::Kind::kVar) {
      if (b->kind == Type::Kind::kVar && b->var_id == a->var_id) return;
      if (occurs(a->var_id, b)) fail(at, "infinite type");
      bindings_[a->var_id] = b;
      return;
    }
    if (b->kind == Type::Kind::kVar) {
      unify(b, a, at);
      return;
    }
    if (a->kind != b->kind) fail(at, "expected " + type_str(a) + ", actual " + type_str(b));
    switch (a->kind) {
      case Type::Kind::kTensor:
        if (!(a->shape == b->shape))
          fail(at, "shape mismatch: expected " + type_str(a) + ", actual " + type_str(b));
        return;
      case Type::Kind::kScalarInt:
      case Type::Kind::kScalarFloat:
        return;
      case Type::Kind::kList:
        unify(a->elem, b->elem, at);
        return;
      case Type::Kind::kTuple:
        if (a->elems.size() != b->elems.size())
          fail(at, "tuple arity mismatch: " + type_str(a) + " vs " + type_str(b));
        for (size_t i = 0; i < a->elems.size(); ++i) unify(a->elems[i], b->elems[i], at);
        return;
      case Type::Kind::kAdt:
        if (a->adt_name != b->adt_name)
          fail(at, "expected " + type_str(a) + ", actual " + type_str(b));
        return;
      default:
        return;
    }
  }

  [[noreturn]] void fail(const Expr& at, const std::string& msg) {
    std::ostringstream os;
    os << "type error at " << at.line << ":" << at.col << ": " << msg;
    throw Error(os.str());
  }

  void infer_func(const std::string& name) {
    auto state = func_state_.find(name);
    if (state != func_state_.end()) return;  // done or in progress
    Program& prog = result_.program;
    FuncDef& fd = prog.functions.at(name);
    func_state_[name] = false;
    Env env;
    for (size_t i = 0; i < fd.param_names.size(); ++i) {
      if (!fd.param_types[i]) fd.param_types[i] = fresh();
      env[fd.param_names[i]] = fd.param_types[i];
    }
    if (!fd.ret_type) fd.ret_type = fresh();
    TypePtr body_t = infer_expr(fd.body, env);
    unify(fd.ret_type, body_t, *fd.body);
    func_state_[name] = true;
  }

  TypePtr record(const Expr& e, TypePtr t) {
    result_.expr_types[e.id] = t;
    return t;
  }

  TypePtr infer_expr(const ExprPtr& ep, Env env) {
    Expr& e = *ep;
    Program& prog = result_.program;
    switch (e.kind) {
      case Expr::Kind::kVar: {
        auto it = env.find(e.var);
        if (it == env.end()) fail(e, "unbound variable '" + e.var + "'");
        return record(e, it->second);
      }
      case Expr::Kind::kLet: {
        TypePtr bt = infer_expr(e.bound, env);
        env[e.var] = bt;
        return record(e, infer_expr(e.body, env));
      }
      case Expr::Kind::kCall: {
        FuncDef& callee = prog.functions.at(e.callee);
        if (callee.param_names.size() != e.args.size())
          fail(e, "@" + e.callee + " expects " + std::to_string(callee.param_names.size()) +
                      " arguments, got " + std::to_string(e.args.size()));
        // First call decides unannotated parameter types.
        for (size_t i = 0; i < callee.param_types.size(); ++i)
          if (!callee.param_types[i]) callee.param_types[i] = fresh();
        if (!callee.ret_type) callee.ret_type = fresh();
        for (size_t i = 0; i < e.args.size(); ++i) {
          TypePtr at = infer_expr(e.args[i], env);
          unify(callee.param_types[i], at, *e.args[i]);
        }
        infer_func(e.callee);
        return record(e, callee.ret_type);
      }
      case Expr::Kind::kCtor: {
        const DataDef& dd = prog.datatypes.at(e.ctor_adt);
        const DataCtor* ctor = nullptr;
        for (const auto& c : dd.ctors)
          if (c.name == e.ctor_name) ctor = &c;
        MBATCH_CHECK(ctor, "constructor lookup");
        if (ctor->fields.size() != e.args.size())
          fail(e, e.ctor_name + " expects " + std::to_string(ctor->fields.size()) +
                      " arguments");
        for (size_t i = 0; i < e.args.size(); ++i) {
          TypePtr at = infer_expr(e.args[i], env);
          unify(ctor->fields[i], at, *e.args[i]);
        }
        return record(e, Type::adt(e.ctor_adt));
      }
      case Expr::Kind::kPrimOp: {
        std::vector<TypePtr> arg_ts;
        for (const auto& a : e.args) arg_ts.push_back(resolve(infer_expr(a, env)));
        if ((e.op == OpCode::kAdd || e.op == OpCode::kMul) && arg_ts[0]->is_scalar()) {
          // Scalar arithmetic parsed as '+'/'*'; rewrite in place.
          if (!arg_ts[1]->is_scalar()) fail(e, "mixed scalar/tensor operands");
          e.sbin_op = e.op == OpCode::kAdd ? "+" : "*";
          e.kind = Expr::Kind::kScalarBin;
          bool f = arg_ts[0]->kind == Type::Kind::kScalarFloat ||
                   arg_ts[1]->kind == Type::Kind::kScalarFloat;
          return record(e, f ? Type::scalar_float() : Type::scalar_int());
        }
        std::vector<Shape> shapes;
        for (size_t i = 0; i < arg_ts.size(); ++i) {
          TypePtr t = arg_ts[i];
          if (t->kind == Type::Kind::kVar) {
            unify(t, Type::tensor(1, 1), e);  // underdetermined; pin late
            t = resolve(t);
          }
          if (!t->is_tensor())
            fail(*e.args[i], std::string(backend::op_name(e.op)) +
                                 ": expected a tensor operand, actual " + type_str(t));
          shapes.push_back(t->shape);
        }
        Shape out;
        try {
          out = backend::infer_shape(e.op, shapes);
        } catch (const Error& err) {
          fail(e, err.what());
        }
        return record(e, Type::tensor(out.rows, out.cols));
      }
      case Expr::Kind::kScalarBin: {
        TypePtr a = resolve(infer_expr(e.args[0], env));
        TypePtr b = resolve(infer_expr(e.args[1], env));
        if (a->kind == Type::Kind::kVar) { unify(a, Type::scalar_int(), e); a = resolve(a); }
        if (b->kind == Type::Kind::kVar) { unify(b, Type::scalar_int(), e); b = resolve(b); }
        if (!a->is_scalar() || !b->is_scalar())
          fail(e, "'" + e.sbin_op + "' needs scalar operands, actual " + type_str(a) + ", " +
                      type_str(b));
        bool cmp = e.sbin_op == "==" || e.sbin_op == "!=" || e.sbin_op == "<" ||
                   e.sbin_op == "<=" || e.sbin_op == ">" || e.sbin_op == ">=";
        if (cmp) return record(e, Type::scalar_int());
        bool f = a->kind == Type::Kind::kScalarFloat || b->kind == Type::Kind::kScalarFloat;
        return record(e, f ? Type::scalar_float() : Type::scalar_int());
      }
      case Expr::Kind::kScalarLit:
        return record(e, e.slit_is_float ? Type::scalar_float() : Type::scalar_int());
      case Expr::Kind::kMatch: {
        TypePtr st = resolve(infer_expr(e.scrutinee, env));
        TypePtr out = fresh();
        if (st->kind == Type::Kind::kList ||
            (st->kind == Type::Kind::kVar && !e.arms.empty() &&
             (e.arms[0].ctor == "Nil" || e.arms[0].ctor == "Cons"))) {
          if (st->kind == Type::Kind::kVar) {
            unify(st, Type::list(fresh()), e);
            st = resolve(st);
          }
          std::set<std::string> seen;
          for (auto& arm : e.arms) {
            Env arm_env = env;
            if (arm.ctor == "Nil") {
              if (!arm.binders.empty()) fail(e, "Nil pattern takes no binders");
            } else if (arm.ctor == "Cons") {
              if (arm.binders.size() != 2) fail(e, "Cons pattern takes two binders");
              arm_env[arm.binders[0]] = st->elem;
              arm_env[arm.binders[1]] = st;
            } else {
              fail(e, "pattern '" + arm.ctor + "' does not match a list");
            }
            seen.insert(arm.ctor);
            unify(out, infer_expr(arm.body, arm_env), *arm.body);
          }
          if (!seen.count("Nil") || !seen.count("Cons"))
            fail(e, "non-exhaustive match on a list");
          return record(e, out);
        }
        if (st->is_tensor() || st->is_scalar())
          fail(e, "match scrutinee must have a list or datatype type, actual " + type_str(st));
        if (st->kind != Type::Kind::kAdt) fail(e, "cannot match on " + type_str(st));
        const DataDef& dd = prog.datatypes.at(st->adt_name);
        std::set<std::string> seen;
        for (auto& arm : e.arms) {
          const DataCtor* ctor = nullptr;
          for (const auto& c : dd.ctors)
            if (c.name == arm.ctor) ctor = &c;
          if (!ctor)
            fail(e, "'" + arm.ctor + "' is not a constructor of " + st->adt_name);
          if (ctor->fields.size() != arm.binders.size())
            fail(e, arm.ctor + " pattern takes " + std::to_string(ctor->fields.size()) +
                        " binders");
          Env arm_env = env;
          for (size_t i = 0; i < arm.binders.size(); ++i)
            arm_env[arm.binders[i]] = ctor->fields[i];
          seen.insert(arm.ctor);
          unify(out, infer_expr(arm.body, arm_env), *arm.body);
        }
        for (const auto& c : dd.ctors)
          if (!seen.count(c.name)) fail(e, "non-exhaustive match: missing " + c.name);
        return record(e, out);
      }
      case Expr::Kind::kIf: {
        TypePtr ct = resolve(infer_expr(e.cond, env));
        if (ct->kind == Type::Kind::kVar) { unify(ct, Type::scalar_int(), e); ct = resolve(ct); }
        if (!ct->is_scalar())
          fail(*e.cond, "if condition must have scalar type, actual " + type_str(ct));
        TypePtr out = infer_expr(e.then_e, env);
        unify(out, infer_expr(e.else_e, env), *e.else_e);
        return record(e, out);
      }
      case Expr::Kind::kListNil:
        return record(e, Type::list(fresh()));
      case Expr::Kind::kListCons: {
        TypePtr h = infer_expr(e.args[0], env);
        TypePtr t = infer_expr(e.args[1], env);
        unify(t, Type::list(h), e);
        return record(e, t);
      }
      case Expr::Kind::kTuple: {
        std::vector<TypePtr> ts;
        for (const auto& a : e.args) ts.push_back(infer_expr(a, env));
        return record(e, Type::tuple(std::move(ts)));
      }
      case Expr::Kind::kProject: {
        TypePtr t = resolve(infer_expr(e.tuple_e, env));
        if (t->kind != Type::Kind::kTuple)
          fail(e, "projection from a non-tuple, actual " + type_str(t));
        if (e.proj_index < 0 || e.proj_index >= static_cast<int>(t->elems.size()))
          fail(e, "projection index out of range");
        return record(e, t->elems[e.proj_index]);
      }
      case Expr::Kind::kConstTensor:
        if (e.const_shape.rows <= 0 || e.const_shape.cols <= 0)
          fail(e, "fill shape must be positive");
        return record(e, Type::tensor(e.const_shape.rows, e.const_shape.cols));
      case Expr::Kind::kScalarOf: {
        TypePtr t = resolve(infer_expr(e.bound, env));
        if (t->kind == Type::Kind::kVar) { unify(t, Type::tensor(1, 1), e); t = resolve(t); }
        if (!t->is_tensor() || !(t->shape == Shape{1, 1}))
          fail(e, "scalar() needs a (1,1) tensor, actual " + type_str(t));
        return record(e, Type::scalar_int());
      }
      case Expr::Kind::kMap: {
        std::vector<TypePtr> elem_ts;
        for (const auto& l : e.map_lists) {
          TypePtr lt = resolve(infer_expr(l, env));
          if (lt->kind == Type::Kind::kVar) {
            unify(lt, Type::list(fresh()), e);
            lt = resolve(lt);
          }
          if (lt->kind != Type::Kind::kList)
            fail(e, "@map needs list arguments, actual " + type_str(lt));
          elem_ts.push_back(lt->elem);
        }
        Env body_env = env;
        for (size_t i = 0; i < e.lambda_params.size(); ++i)
          body_env[e.lambda_params[i]] = elem_ts[i];
        TypePtr bt = infer_expr(e.lambda_body, body_env);
        return record(e, Type::list(bt));
      }
      case Expr::Kind::kGhost:
        return record(e, infer_expr(e.ghost_body, env));
    }
    throw Error("unreachable");
  }

  TypedProgram result_;
  std::map<int, TypePtr> bindings_;
  std::map<std::string, bool> func_state_;
  int next_var_ = 0;
};

}  // namespace

TypedProgram infer_types(const Program& program) { return Infer(program).run(); }

}  // namespace ir
}  // namespace mbatch
