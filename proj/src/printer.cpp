#include <algorithm>
#include <sstream>
#include <tuple>

#include "mbatch/ir.hpp"

namespace mbatch {
namespace ir {

namespace {

class Printer {
 public:
  explicit Printer(const Program& p) : prog_(p) {}

  std::string run() {
    for (const auto& [name, dd] : prog_.datatypes) print_data(dd);
    // @main last, other functions in name order first.
    for (const auto& [name, fd] : prog_.functions)
      if (name != "main") print_func(fd);
    print_func(prog_.functions.at("main"));
    return os_.str();
  }

 private:
  void print_data(const DataDef& dd) {
    os_ << "data " << dd.name << " {\n";
    for (size_t i = 0; i < dd.ctors.size(); ++i) {
      os_ << "  " << dd.ctors[i].name;
      if (!dd.ctors[i].fields.empty()) {
        os_ << "(";
        for (size_t j = 0; j < dd.ctors[i].fields.size(); ++j) {
          if (j) os_ << ", ";
          os_ << type_str(dd.ctors[i].fields[j]);
        }
        os_ << ")";
      }
      os_ << (i + 1 < dd.ctors.size() ? ",\n" : "\n");
    }
    os_ << "}\n\n";
  }

  void print_func(const FuncDef& fd) {
    os_ << "def @" << fd.name << "(";
    for (size_t i = 0; i < fd.param_names.size(); ++i) {
      if (i) os_ << ", ";
      if (fd.name == "main" && i < prog_.params.size() && prog_.params[i].is_instance_input &&
          prog_.params[i].type && prog_.params[i].type->is_tensor())
        os_ << "input ";
      os_ << fd.param_names[i];
      if (fd.param_types[i]) os_ << ": " << type_str(fd.param_types[i]);
    }
    os_ << ")";
    if (fd.ret_type) os_ << " -> " << type_str(fd.ret_type);
    os_ << " ";
    // Explicit phase annotations keyed by stage index.
    phase_by_stage_.clear();
    for (const auto& a : fd.annotations)
      if (a.kind == Annotation::Kind::kPhase) phase_by_stage_[a.stage_index] = a.phase;
    print_block(fd.body, 0);
    os_ << "\n\n";
    phase_by_stage_.clear();
  }

  void indent(int n) {
    for (int i = 0; i < n; ++i) os_ << "  ";
  }

  // Prints `{ let*; expr }`, tracking stage indices for phase markers.
  void print_block(const ExprPtr& e, int depth, bool top_level = true) {
    os_ << "{\n";
    ExprPtr cur = e;
    int stage = 0;
    while (cur->kind == Expr::Kind::kLet) {
      if (top_level && depth == 0 && phase_by_stage_.count(stage)) {
        indent(depth + 1);
        os_ << "set_phase(" << phase_by_stage_[stage] << ");\n";
      }
      indent(depth + 1);
      os_ << "let " << cur->var << " = ";
      print_expr(cur->bound, depth + 1);
      os_ << ";\n";
      cur = cur->body;
      ++stage;
    }
    if (top_level && depth == 0 && phase_by_stage_.count(stage)) {
      indent(depth + 1);
      os_ << "set_phase(" << phase_by_stage_[stage] << ");\n";
    }
    indent(depth + 1);
    print_expr(cur, depth + 1);
    os_ << "\n";
    indent(depth);
    os_ << "}";
  }

  void print_expr(const ExprPtr& e, int depth) {
    switch (e->kind) {
      case Expr::Kind::kVar:
        os_ << e->var;
        break;
      case Expr::Kind::kLet:
        print_block(e, depth, false);
        break;
      case Expr::Kind::kCall:
        os_ << "@" << e->callee << "(";
        print_args(e->args, depth);
        os_ << ")";
        if (e->concurrent_group) os_ << " concurrent(" << *e->concurrent_group << ")";
        break;
      case Expr::Kind::kCtor:
        os_ << e->ctor_name;
        if (!e->args.empty()) {
          os_ << "(";
          print_args(e->args, depth);
          os_ << ")";
        }
        break;
      case Expr::Kind::kPrimOp:
        print_primop(e, depth);
        break;
      case Expr::Kind::kScalarBin:
        os_ << "(";
        print_expr(e->args[0], depth);
        os_ << " " << e->sbin_op << " ";
        print_expr(e->args[1], depth);
        os_ << ")";
        break;
      case Expr::Kind::kScalarLit:
        if (e->slit_is_float) {
          std::ostringstream tmp;
          tmp << e->slit_float;
          std::string s = tmp.str();
          if (s.find('.') == std::string::npos) s += ".0";
          os_ << s;
        } else {
          os_ << e->slit_int;
        }
        break;
      case Expr::Kind::kMatch:
        os_ << "match (";
        print_expr(e->scrutinee, depth);
        os_ << ") {\n";
        for (size_t i = 0; i < e->arms.size(); ++i) {
          indent(depth + 1);
          os_ << e->arms[i].ctor;
          if (!e->arms[i].binders.empty()) {
            os_ << "(";
            for (size_t j = 0; j < e->arms[i].binders.size(); ++j) {
              if (j) os_ << ", ";
              os_ << e->arms[i].binders[j];
            }
            os_ << ")";
          }
          os_ << " => ";
          print_expr(e->arms[i].body, depth + 1);
          os_ << (i + 1 < e->arms.size() ? ",\n" : "\n");
        }
        indent(depth);
        os_ << "}";
        break;
      case Expr::Kind::kIf:
        os_ << "if (";
        print_expr(e->cond, depth);
        os_ << ") ";
        print_arm_body(e->then_e, depth);
        os_ << " else ";
        print_arm_body(e->else_e, depth);
        break;
      case Expr::Kind::kListNil:
        os_ << "Nil";
        break;
      case Expr::Kind::kListCons:
        os_ << "Cons(";
        print_args(e->args, depth);
        os_ << ")";
        break;
      case Expr::Kind::kTuple:
        os_ << "(";
        print_args(e->args, depth);
        os_ << ")";
        break;
      case Expr::Kind::kProject:
        print_expr(e->tuple_e, depth);
        os_ << "." << e->proj_index;
        break;
      case Expr::Kind::kConstTensor: {
        std::ostringstream tmp;
        tmp << e->const_value;
        std::string s = tmp.str();
        if (s.find('.') == std::string::npos && s.find('e') == std::string::npos) s += ".0";
        os_ << "fill((" << e->const_shape.rows << ", " << e->const_shape.cols << "), " << s
            << ")";
        break;
      }
      case Expr::Kind::kScalarOf:
        os_ << "scalar(";
        print_expr(e->bound, depth);
        os_ << ")";
        break;
      case Expr::Kind::kMap:
        os_ << (e->map_lists.size() == 2 ? "@map2(fn(" : "@map(fn(");
        for (size_t i = 0; i < e->lambda_params.size(); ++i) {
          if (i) os_ << ", ";
          os_ << e->lambda_params[i];
        }
        os_ << ") ";
        print_arm_body(e->lambda_body, depth);
        for (const auto& l : e->map_lists) {
          os_ << ", ";
          print_expr(l, depth);
        }
        os_ << ")";
        break;
      case Expr::Kind::kGhost:
        os_ << "ghost(" << e->ghost_count << ") ";
        print_arm_body(e->ghost_body, depth);
        break;
    }
  }

  // if/else and lambda bodies always print in braces.
  void print_arm_body(const ExprPtr& e, int depth) {
    if (e->kind == Expr::Kind::kLet) {
      print_block(e, depth, false);
    } else {
      os_ << "{\n";
      indent(depth + 1);
      print_expr(e, depth + 1);
      os_ << "\n";
      indent(depth);
      os_ << "}";
    }
  }

  void print_primop(const ExprPtr& e, int depth) {
    switch (e->op) {
      case OpCode::kAdd:
      case OpCode::kMul:
        os_ << "(";
        print_expr(e->args[0], depth);
        os_ << (e->op == OpCode::kAdd ? " + " : " * ");
        print_expr(e->args[1], depth);
        os_ << ")";
        return;
      case OpCode::kDense:
        os_ << "nn.dense(";
        break;
      case OpCode::kSigmoid: os_ << "sigmoid("; break;
      case OpCode::kTanh: os_ << "tanh("; break;
      case OpCode::kRelu: os_ << "relu("; break;
      case OpCode::kConcat: os_ << "concat("; break;
      case OpCode::kArgmax: os_ << "argmax("; break;
      default: os_ << backend::op_name(e->op) << "(";
    }
    print_args(e->args, depth);
    os_ << ")";
  }

  void print_args(const std::vector<ExprPtr>& args, int depth) {
    for (size_t i = 0; i < args.size(); ++i) {
      if (i) os_ << ", ";
      print_expr(args[i], depth);
    }
  }

  const Program& prog_;
  std::ostringstream os_;
  std::map<int, int> phase_by_stage_;
};

bool expr_equal(const ExprPtr& a, const ExprPtr& b);

bool exprs_equal(const std::vector<ExprPtr>& a, const std::vector<ExprPtr>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!expr_equal(a[i], b[i])) return false;
  return true;
}

bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (!a || !b) return a == b;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case Expr::Kind::kVar: return a->var == b->var;
    case Expr::Kind::kLet:
      return a->var == b->var && expr_equal(a->bound, b->bound) && expr_equal(a->body, b->body);
    case Expr::Kind::kCall:
      return a->callee == b->callee && a->concurrent_group == b->concurrent_group &&
             exprs_equal(a->args, b->args);
    case Expr::Kind::kCtor:
      return a->ctor_adt == b->ctor_adt && a->ctor_name == b->ctor_name &&
             exprs_equal(a->args, b->args);
    case Expr::Kind::kPrimOp: return a->op == b->op && exprs_equal(a->args, b->args);
    case Expr::Kind::kScalarBin:
      return a->sbin_op == b->sbin_op && exprs_equal(a->args, b->args);
    case Expr::Kind::kScalarLit:
      return a->slit_is_float == b->slit_is_float && a->slit_int == b->slit_int &&
             a->slit_float == b->slit_float;
    case Expr::Kind::kMatch: {
      if (!expr_equal(a->scrutinee, b->scrutinee) || a->arms.size() != b->arms.size())
        return false;
      for (size_t i = 0; i < a->arms.size(); ++i) {
        if (a->arms[i].ctor != b->arms[i].ctor || a->arms[i].binders != b->arms[i].binders ||
            !expr_equal(a->arms[i].body, b->arms[i].body))
          return false;
      }
      return true;
    }
    case Expr::Kind::kIf:
      return expr_equal(a->cond, b->cond) && expr_equal(a->then_e, b->then_e) &&
             expr_equal(a->else_e, b->else_e);
    case Expr::Kind::kListNil: return true;
    case Expr::Kind::kListCons: return exprs_equal(a->args, b->args);
    case Expr::Kind::kTuple: return exprs_equal(a->args, b->args);
    case Expr::Kind::kProject:
      return a->proj_index == b->proj_index && expr_equal(a->tuple_e, b->tuple_e);
    case Expr::Kind::kConstTensor:
      return a->const_shape == b->const_shape && a->const_value == b->const_value;
    case Expr::Kind::kScalarOf: return expr_equal(a->bound, b->bound);
    case Expr::Kind::kMap:
      return a->lambda_params == b->lambda_params &&
             expr_equal(a->lambda_body, b->lambda_body) &&
             exprs_equal(a->map_lists, b->map_lists);
    case Expr::Kind::kGhost:
      return a->ghost_count == b->ghost_count && expr_equal(a->ghost_body, b->ghost_body);
  }
  return false;
}

}  // namespace

std::string pretty_print(const Program& p) { return Printer(p).run(); }

bool program_equal(const Program& a, const Program& b) {
  if (a.entry != b.entry) return false;
  if (a.functions.size() != b.functions.size()) return false;
  if (a.datatypes.size() != b.datatypes.size()) return false;
  for (const auto& [name, dd] : a.datatypes) {
    auto it = b.datatypes.find(name);
    if (it == b.datatypes.end() || it->second.ctors.size() != dd.ctors.size()) return false;
    for (size_t i = 0; i < dd.ctors.size(); ++i) {
      if (dd.ctors[i].name != it->second.ctors[i].name) return false;
      if (dd.ctors[i].fields.size() != it->second.ctors[i].fields.size()) return false;
      for (size_t j = 0; j < dd.ctors[i].fields.size(); ++j)
        if (!type_equal(dd.ctors[i].fields[j], it->second.ctors[i].fields[j])) return false;
    }
  }
  for (const auto& [name, fa] : a.functions) {
    auto it = b.functions.find(name);
    if (it == b.functions.end()) return false;
    const FuncDef& fb = it->second;
    if (fa.param_names != fb.param_names) return false;
    if (fa.param_types.size() != fb.param_types.size()) return false;
    for (size_t i = 0; i < fa.param_types.size(); ++i)
      if (!type_equal(fa.param_types[i], fb.param_types[i])) return false;
    if (!type_equal(fa.ret_type, fb.ret_type)) return false;
    if (!expr_equal(fa.body, fb.body)) return false;
    // Compare annotations structurally (order-insensitive for groups).
    auto key = [](const Annotation& an) {
      return std::tuple(static_cast<int>(an.kind), an.group_id, an.phase, an.stage_index,
                        an.call_site_ids.size());
    };
    if (fa.annotations.size() != fb.annotations.size()) return false;
    auto as = fa.annotations, bs = fb.annotations;
    auto cmp = [&](const Annotation& x, const Annotation& y) { return key(x) < key(y); };
    std::sort(as.begin(), as.end(), cmp);
    std::sort(bs.begin(), bs.end(), cmp);
    for (size_t i = 0; i < as.size(); ++i)
      if (key(as[i]) != key(bs[i])) return false;
  }
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name != b.params[i].name) return false;
    if (!type_equal(a.params[i].type, b.params[i].type)) return false;
    if (a.params[i].is_instance_input != b.params[i].is_instance_input) return false;
  }
  return true;
}

}  // namespace ir
}  // namespace mbatch
