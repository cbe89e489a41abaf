// Functional tensor IR: expressions, types, parsing, printing,
// shape/type inference and annotation validation.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mbatch/backend.hpp"

namespace mbatch {
namespace ir {

using backend::OpCode;
using backend::Shape;

// ---------------------------------------------------------------------------
// Types

struct Type;
using TypePtr = std::shared_ptr<Type>;

struct Type {
  enum class Kind { kTensor, kScalarInt, kScalarFloat, kList, kTuple, kAdt, kVar };
  Kind kind = Kind::kVar;
  Shape shape;                  // kTensor
  TypePtr elem;                 // kList
  std::vector<TypePtr> elems;   // kTuple
  std::string adt_name;         // kAdt
  int var_id = -1;              // kVar (inference only)

  static TypePtr tensor(int rows, int cols);
  static TypePtr scalar_int();
  static TypePtr scalar_float();
  static TypePtr list(TypePtr elem);
  static TypePtr tuple(std::vector<TypePtr> elems);
  static TypePtr adt(std::string name);
  static TypePtr var(int id);

  bool is_tensor() const { return kind == Kind::kTensor; }
  bool is_scalar() const { return kind == Kind::kScalarInt || kind == Kind::kScalarFloat; }
};

bool type_equal(const TypePtr& a, const TypePtr& b);
std::string type_str(const TypePtr& t);

// ---------------------------------------------------------------------------
// Expressions

struct Expr;
using ExprPtr = std::shared_ptr<Expr>;

struct MatchArm {
  std::string ctor;                  // "Nil", "Cons" or a data constructor
  std::vector<std::string> binders;
  ExprPtr body;
};

struct Expr {
  enum class Kind {
    kVar,
    kLet,
    kCall,        // @f(args), optional concurrent group
    kCtor,        // data-constructor application
    kPrimOp,
    kScalarBin,   // scalar arithmetic / comparison
    kScalarLit,
    kMatch,
    kIf,
    kListNil,
    kListCons,
    kTuple,
    kProject,
    kConstTensor, // fill(shape, value)
    kScalarOf,    // scalar(e): value request, forces evaluation
    kMap,         // built-in @map / @map2 with a literal lambda
    kGhost,       // ghost(k) { e }: k scheduler-only units, then e
  };

  Kind kind;
  int id = -1;          // unique per program, assigned by the parser
  int line = 0, col = 0;

  // kVar / kLet binder
  std::string var;
  // kLet
  ExprPtr bound, body;
  // kCall
  std::string callee;
  std::vector<ExprPtr> args;
  std::optional<int> concurrent_group;
  int call_site_id = -1;
  // kCtor
  std::string ctor_adt, ctor_name;
  // kPrimOp
  OpCode op = OpCode::kAdd;
  // kScalarBin: one of + - == != < <= > >=
  std::string sbin_op;
  // kScalarLit
  long slit_int = 0;
  double slit_float = 0.0;
  bool slit_is_float = false;
  // kMatch
  ExprPtr scrutinee;
  std::vector<MatchArm> arms;
  // kIf
  ExprPtr cond, then_e, else_e;
  // kTuple uses args; kProject
  ExprPtr tuple_e;
  int proj_index = 0;
  // kConstTensor
  Shape const_shape;
  double const_value = 0.0;
  // kScalarOf uses bound; kMap
  std::vector<std::string> lambda_params;
  ExprPtr lambda_body;
  std::vector<ExprPtr> map_lists;
  // kGhost
  int ghost_count = 0;
  ExprPtr ghost_body;
};

struct Annotation {
  enum class Kind { kConcurrentCalls, kPhase };
  Kind kind;
  int group_id = -1;                 // kConcurrentCalls
  std::vector<int> call_site_ids;
  int phase = -1;                    // kPhase: explicit phase of a main stage
  int stage_index = -1;
};

struct FuncDef {
  std::string name;
  std::vector<std::string> param_names;
  std::vector<TypePtr> param_types;  // entries may be null before inference
  TypePtr ret_type;                  // may be null before inference
  ExprPtr body;
  std::vector<Annotation> annotations;
};

struct DataCtor {
  std::string name;
  std::vector<TypePtr> fields;
};

struct DataDef {
  std::string name;
  std::vector<DataCtor> ctors;
};

struct ParamDecl {
  std::string name;
  TypePtr type;
  bool is_instance_input = false;  // per-instance program input vs model parameter
};

struct Program {
  std::map<std::string, FuncDef> functions;
  std::map<std::string, DataDef> datatypes;
  std::string entry = "main";
  std::vector<ParamDecl> params;   // main's declarations, in order
  int next_expr_id = 0;
  int next_call_site = 0;
};

// ---------------------------------------------------------------------------
// Operations

struct ParseError : Error {
  ParseError(const std::string& msg, int line, int col)
      : Error(msg + " at " + std::to_string(line) + ":" + std::to_string(col)),
        line(line), col(col) {}
  int line, col;
};

Program parse_program(const std::string& source_text);
std::string pretty_print(const Program& p);
bool program_equal(const Program& a, const Program& b);

// Deep AST copy. With `fresh_ids`, new expr ids and call-site ids are drawn
// from that program's counters; otherwise ids are preserved.
ExprPtr clone_expr(const ExprPtr& e, Program* fresh_ids = nullptr);
Program clone_program(const Program& p);

// Typed program: the same AST plus a type for every expression id.
struct TypedProgram {
  Program program;
  std::vector<TypePtr> expr_types;  // indexed by Expr::id
  const TypePtr& type_of(const Expr& e) const { return expr_types.at(e.id); }
};

TypedProgram infer_types(const Program& program);

struct ValidationReport {
  struct Group {
    int group_id;
    std::string function;
    std::vector<int> call_site_ids;
  };
  std::vector<Group> concurrent_groups;
  std::vector<std::pair<int, int>> phase_boundaries;  // (stage index, phase)
  bool ok = true;
  std::vector<std::string> errors;
};

ValidationReport validate_annotations(const TypedProgram& program);

}  // namespace ir
}  // namespace mbatch
