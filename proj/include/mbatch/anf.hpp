// Administrative normal form of a typed program: every intermediate value
// is named, bodies are flat instruction sequences with nested regions for
// control flow. Analysis passes and both interpreters work on this form.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mbatch/ir.hpp"

namespace mbatch {
namespace anf {

using backend::OpCode;
using backend::Shape;
using ir::TypePtr;

struct Body;
using BodyPtr = std::shared_ptr<Body>;

struct Instr {
  enum class Kind {
    kPrim,       // tensor op
    kFill,       // constant tensor
    kScalarLit,
    kScalarBin,
    kScalarOf,   // value request
    kCall,
    kCtor,
    kNil,
    kCons,
    kTuple,
    kProj,
    kMatch,
    kIf,
    kMap,
    kGhost,
  };

  Kind kind;
  std::string dst;
  TypePtr dst_type;
  std::vector<std::string> args;
  int ast_id = -1;  // originating AST expression

  // kPrim
  OpCode op = OpCode::kAdd;
  int prim_site = -1;            // module-wide prim-op site id
  Shape out_shape;
  std::vector<Shape> arg_shapes;
  // kFill
  Shape fill_shape;
  double fill_value = 0.0;
  // kScalarLit
  long lit_int = 0;
  double lit_float = 0.0;
  bool lit_is_float = false;
  // kScalarBin
  std::string sbin_op;
  // kCall
  std::string callee;
  std::optional<int> concurrent_group;
  int call_site = -1;
  // kCtor
  std::string ctor_adt, ctor_name;
  // kProj
  int proj_index = 0;
  // kMatch: args[0] is the scrutinee
  struct Arm {
    std::string ctor;
    std::vector<std::string> binders;
    BodyPtr body;
  };
  std::vector<Arm> arms;
  // kIf: args[0] is the condition
  BodyPtr then_body, else_body;
  // kMap: lambda over one or two lists (args are the list vars)
  std::vector<std::string> lambda_params;
  BodyPtr map_body;
  // kGhost
  int ghost_count = 0;
  BodyPtr ghost_body;
};

struct Body {
  std::vector<Instr> instrs;
  std::string result;            // var name of the body's value
};

struct Function {
  std::string name;
  std::vector<std::string> params;
  std::vector<TypePtr> param_types;
  TypePtr ret_type;
  BodyPtr body;
  // Concurrent call groups: group id -> call site ids (from annotations).
  std::map<int, std::vector<int>> concurrent_groups;
};

struct Module {
  std::map<std::string, Function> functions;
  std::string entry;
  std::vector<ir::ParamDecl> params;           // model params + instance inputs
  std::map<std::string, ir::DataDef> datatypes;
  int num_prim_sites = 0;
  // For @main's top-level body: source stage index per instruction.
  std::vector<int> main_stage_of_instr;
  int main_num_stages = 0;
  // Explicit phase annotations on main stages (stage index -> phase).
  std::map<int, int> main_explicit_phases;
};

Module build_module(const ir::TypedProgram& tp);

}  // namespace anf
}  // namespace mbatch
