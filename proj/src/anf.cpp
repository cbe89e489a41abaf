#include "mbatch/anf.hpp"

namespace mbatch {
namespace anf {

namespace {

using ir::Expr;
using ir::ExprPtr;
using ir::Type;

class Builder {
 public:
  explicit Builder(const ir::TypedProgram& tp) : tp_(tp) {}

  Module run() {
    const ir::Program& p = tp_.program;
    mod_.entry = p.entry;
    mod_.params = p.params;
    mod_.datatypes = p.datatypes;
    for (const auto& [name, fd] : p.functions) {
      Function f;
      f.name = name;
      f.ret_type = fd.ret_type;
      scope_.clear();
      next_rename_.clear();
      for (size_t i = 0; i < fd.param_names.size(); ++i) {
        f.params.push_back(bind_name(fd.param_names[i]));
        f.param_types.push_back(fd.param_types[i]);
      }
      in_main_top_ = name == "main";
      main_stage_ = 0;
      f.body = std::make_shared<Body>();
      f.body->result = convert(fd.body, *f.body, "");
      in_main_top_ = false;
      for (const auto& a : fd.annotations) {
        if (a.kind == ir::Annotation::Kind::kConcurrentCalls)
          f.concurrent_groups[a.group_id] = a.call_site_ids;
        else if (name == "main")
          mod_.main_explicit_phases[a.stage_index] = a.phase;
      }
      if (name == "main") mod_.main_num_stages = main_stage_ + 1;
      mod_.functions[name] = std::move(f);
    }
    return std::move(mod_);
  }

 private:
  std::string fresh_tmp() { return "%t" + std::to_string(next_tmp_++); }

  // Source binders are renamed to be globally unique within a function.
  std::string bind_name(const std::string& src) {
    int n = next_rename_[src]++;
    std::string name = n == 0 ? src : src + "$" + std::to_string(n);
    scope_[src].push_back(name);
    return name;
  }
  void unbind_name(const std::string& src) { scope_[src].pop_back(); }
  std::string lookup(const ExprPtr& e) {
    auto it = scope_.find(e->var);
    if (it == scope_.end() || it->second.empty())
      throw Error("unbound variable '" + e->var + "' during normalization");
    return it->second.back();
  }

  Instr& push(Body& body, Instr::Kind kind, const std::string& dst, TypePtr type,
              int ast_id = -1) {
    Instr in;
    in.kind = kind;
    in.dst = dst;
    in.dst_type = type;
    in.ast_id = ast_id;
    body.instrs.push_back(std::move(in));
    if (in_main_top_ && depth_ == 0) mod_.main_stage_of_instr.push_back(main_stage_);
    return body.instrs.back();
  }

  BodyPtr convert_subbody(const ExprPtr& e) {
    ++depth_;
    auto b = std::make_shared<Body>();
    b->result = convert(e, *b, "");
    --depth_;
    return b;
  }

  // Converts `e`, appending instructions to `body`; returns the var holding
  // the result. `want` names the destination when non-empty.
  std::string convert(const ExprPtr& e, Body& body, const std::string& want) {
    switch (e->kind) {
      case Expr::Kind::kVar: {
        std::string v = lookup(e);
        return v;
      }
      case Expr::Kind::kLet: {
        ExprPtr cur = e;
        std::vector<std::string> bound_srcs;
        while (cur->kind == Expr::Kind::kLet) {
          std::string dst_src = cur->var;
          // Convert the bound expression first (binder not yet in scope).
          std::string tmp_name;
          {
            // Reserve the renamed target without exposing it to the bound expr.
            int n = next_rename_[dst_src]++;
            tmp_name = n == 0 ? dst_src : dst_src + "$" + std::to_string(n);
          }
          std::string got = convert(cur->bound, body, tmp_name);
          if (got != tmp_name) {
            // Pure alias; no instruction needed.
            scope_[dst_src].push_back(got);
          } else {
            scope_[dst_src].push_back(tmp_name);
          }
          bound_srcs.push_back(dst_src);
          cur = cur->body;
          if (in_main_top_ && depth_ == 0) ++main_stage_;
        }
        std::string res = convert(cur, body, want);
        for (auto it = bound_srcs.rbegin(); it != bound_srcs.rend(); ++it) unbind_name(*it);
        return res;
      }
      case Expr::Kind::kCall: {
        std::vector<std::string> args;
        for (const auto& a : e->args) args.push_back(convert(a, body, ""));
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kCall, dst, tp_.type_of(*e), e->id);
        in.callee = e->callee;
        in.args = std::move(args);
        in.concurrent_group = e->concurrent_group;
        in.call_site = e->call_site_id;
        return dst;
      }
      case Expr::Kind::kCtor: {
        std::vector<std::string> args;
        for (const auto& a : e->args) args.push_back(convert(a, body, ""));
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kCtor, dst, tp_.type_of(*e), e->id);
        in.ctor_adt = e->ctor_adt;
        in.ctor_name = e->ctor_name;
        in.args = std::move(args);
        return dst;
      }
      case Expr::Kind::kPrimOp: {
        std::vector<std::string> args;
        std::vector<Shape> arg_shapes;
        for (const auto& a : e->args) {
          args.push_back(convert(a, body, ""));
          arg_shapes.push_back(tp_.type_of(*a)->shape);
        }
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kPrim, dst, tp_.type_of(*e), e->id);
        in.op = e->op;
        in.args = std::move(args);
        in.arg_shapes = std::move(arg_shapes);
        in.out_shape = tp_.type_of(*e)->shape;
        in.prim_site = mod_.num_prim_sites++;
        return dst;
      }
      case Expr::Kind::kScalarBin: {
        std::string a = convert(e->args[0], body, "");
        std::string b = convert(e->args[1], body, "");
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kScalarBin, dst, tp_.type_of(*e), e->id);
        in.sbin_op = e->sbin_op;
        in.args = {a, b};
        return dst;
      }
      case Expr::Kind::kScalarLit: {
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kScalarLit, dst, tp_.type_of(*e), e->id);
        in.lit_int = e->slit_int;
        in.lit_float = e->slit_float;
        in.lit_is_float = e->slit_is_float;
        return dst;
      }
      case Expr::Kind::kMatch: {
        std::string scrut = convert(e->scrutinee, body, "");
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kMatch, dst, tp_.type_of(*e), e->id);
        in.args = {scrut};
        for (const auto& arm : e->arms) {
          Instr::Arm out;
          out.ctor = arm.ctor;
          for (const auto& b : arm.binders) out.binders.push_back(bind_name(b));
          out.body = convert_subbody(arm.body);
          for (const auto& b : arm.binders) unbind_name(b);
          in.arms.push_back(std::move(out));
        }
        return dst;
      }
      case Expr::Kind::kIf: {
        std::string cond = convert(e->cond, body, "");
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kIf, dst, tp_.type_of(*e), e->id);
        in.args = {cond};
        in.then_body = convert_subbody(e->then_e);
        in.else_body = convert_subbody(e->else_e);
        return dst;
      }
      case Expr::Kind::kListNil: {
        std::string dst = want.empty() ? fresh_tmp() : want;
        push(body, Instr::Kind::kNil, dst, tp_.type_of(*e), e->id);
        return dst;
      }
      case Expr::Kind::kListCons: {
        std::string h = convert(e->args[0], body, "");
        std::string t = convert(e->args[1], body, "");
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kCons, dst, tp_.type_of(*e), e->id);
        in.args = {h, t};
        return dst;
      }
      case Expr::Kind::kTuple: {
        std::vector<std::string> args;
        for (const auto& a : e->args) args.push_back(convert(a, body, ""));
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kTuple, dst, tp_.type_of(*e), e->id);
        in.args = std::move(args);
        return dst;
      }
      case Expr::Kind::kProject: {
        std::string t = convert(e->tuple_e, body, "");
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kProj, dst, tp_.type_of(*e), e->id);
        in.args = {t};
        in.proj_index = e->proj_index;
        return dst;
      }
      case Expr::Kind::kConstTensor: {
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kFill, dst, tp_.type_of(*e), e->id);
        in.fill_shape = e->const_shape;
        in.fill_value = e->const_value;
        return dst;
      }
      case Expr::Kind::kScalarOf: {
        std::string t = convert(e->bound, body, "");
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kScalarOf, dst, tp_.type_of(*e), e->id);
        in.args = {t};
        return dst;
      }
      case Expr::Kind::kMap: {
        std::vector<std::string> lists;
        for (const auto& l : e->map_lists) lists.push_back(convert(l, body, ""));
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kMap, dst, tp_.type_of(*e), e->id);
        in.args = lists;
        for (const auto& p : e->lambda_params) in.lambda_params.push_back(bind_name(p));
        in.map_body = convert_subbody(e->lambda_body);
        for (const auto& p : e->lambda_params) unbind_name(p);
        return dst;
      }
      case Expr::Kind::kGhost: {
        std::string dst = want.empty() ? fresh_tmp() : want;
        Instr& in = push(body, Instr::Kind::kGhost, dst, tp_.type_of(*e), e->id);
        in.ghost_count = e->ghost_count;
        in.ghost_body = convert_subbody(e->ghost_body);
        return dst;
      }
    }
    throw Error("unreachable");
  }

  const ir::TypedProgram& tp_;
  Module mod_;
  std::map<std::string, std::vector<std::string>> scope_;
  std::map<std::string, int> next_rename_;
  int next_tmp_ = 0;
  bool in_main_top_ = false;
  int main_stage_ = 0;
  int depth_ = 0;
};

}  // namespace

Module build_module(const ir::TypedProgram& tp) { return Builder(tp).run(); }

}  // namespace anf
}  // namespace mbatch
