// Sequential unbatched interpreter: the correctness oracle every batched
// run is compared against, bitwise.
#include <functional>

#include "mbatch/runtime.hpp"

namespace mbatch {
namespace runtime {

namespace {

using anf::Body;
using anf::Instr;
using backend::Arena;
using backend::OpCode;
using backend::TensorHandle;

struct Val;
struct ConsCell;

struct Val {
  enum class Kind { kTensor, kInt, kFloat, kList, kTuple, kAdt };
  Kind kind = Kind::kInt;
  TensorHandle t;
  long i = 0;
  double f = 0.0;
  std::shared_ptr<ConsCell> list;  // null = Nil
  std::vector<Val> items;
  std::string ctor;
};

struct ConsCell {
  Val head;
  std::shared_ptr<ConsCell> tail;
};

class RefInterp {
 public:
  RefInterp(const CompiledModel& model, const ParamEnv& params) : model_(model) {
    for (const auto& decl : model_.module.params) {
      if (decl.is_instance_input) continue;
      auto it = params.find(decl.name);
      MBATCH_CHECK(it != params.end(), "missing model parameter " + decl.name);
      param_vals_[decl.name] = materialize(it->second);
    }
  }

  HostValue run_instance(const InstanceInput& input) {
    const anf::Function& main_fn = model_.module.functions.at(model_.module.entry);
    std::map<std::string, Val> env;
    for (size_t i = 0; i < main_fn.params.size(); ++i) {
      const auto& decl = model_.module.params[i];
      if (decl.is_instance_input) {
        auto it = input.find(decl.name);
        MBATCH_CHECK(it != input.end(), "missing instance input " + decl.name);
        env[main_fn.params[i]] = materialize(it->second);
      } else {
        env[main_fn.params[i]] = param_vals_.at(decl.name);
      }
    }
    Val out = eval_body(*main_fn.body, env);
    return to_host(out);
  }

 private:
  Val materialize(const HostValue& hv) {
    Val v;
    switch (hv.kind) {
      case HostValue::Kind::kTensor: {
        v.kind = Val::Kind::kTensor;
        v.t = arena_.alloc(hv.shape);
        float* p = arena_.ptr(v.t);
        for (size_t k = 0; k < hv.data.size(); ++k) p[k] = hv.data[k];
        break;
      }
      case HostValue::Kind::kInt:
        v.kind = Val::Kind::kInt;
        v.i = hv.ival;
        break;
      case HostValue::Kind::kFloat:
        v.kind = Val::Kind::kFloat;
        v.f = hv.fval;
        break;
      case HostValue::Kind::kList: {
        v.kind = Val::Kind::kList;
        std::shared_ptr<ConsCell> list;
        for (auto it = hv.items.rbegin(); it != hv.items.rend(); ++it) {
          auto cell = std::make_shared<ConsCell>();
          cell->head = materialize(*it);
          cell->tail = list;
          list = cell;
        }
        v.list = list;
        break;
      }
      case HostValue::Kind::kTuple:
        v.kind = Val::Kind::kTuple;
        for (const auto& f : hv.items) v.items.push_back(materialize(f));
        break;
      case HostValue::Kind::kAdt:
        v.kind = Val::Kind::kAdt;
        v.ctor = hv.ctor;
        for (const auto& f : hv.items) v.items.push_back(materialize(f));
        break;
    }
    return v;
  }

  HostValue to_host(const Val& v) {
    switch (v.kind) {
      case Val::Kind::kTensor: {
        std::vector<float> data(v.t.size());
        const float* p = arena_.ptr(v.t);
        for (int64_t k = 0; k < v.t.size(); ++k) data[k] = p[k];
        return HostValue::tensor(v.t.shape, std::move(data));
      }
      case Val::Kind::kInt: return HostValue::scalar(v.i);
      case Val::Kind::kFloat: {
        HostValue h;
        h.kind = HostValue::Kind::kFloat;
        h.fval = v.f;
        return h;
      }
      case Val::Kind::kList: {
        std::vector<HostValue> items;
        for (auto c = v.list; c; c = c->tail) items.push_back(to_host(c->head));
        return HostValue::list(std::move(items));
      }
      case Val::Kind::kTuple: {
        std::vector<HostValue> items;
        for (const auto& f : v.items) items.push_back(to_host(f));
        return HostValue::tuple(std::move(items));
      }
      case Val::Kind::kAdt: {
        std::vector<HostValue> items;
        for (const auto& f : v.items) items.push_back(to_host(f));
        return HostValue::adt(v.ctor, std::move(items));
      }
    }
    throw Error("unreachable");
  }

  TensorHandle const_tensor(const Shape& shape, double value) {
    auto key = std::tuple(shape.rows, shape.cols, value);
    auto it = const_cache_.find(key);
    if (it != const_cache_.end()) return it->second;
    TensorHandle h = arena_.alloc(shape);
    backend::exec_primop(arena_, OpCode::kFill, {}, h, static_cast<float>(value));
    const_cache_[key] = h;
    return h;
  }

  Val eval_body(const Body& b, std::map<std::string, Val>& outer_env) {
    std::map<std::string, Val> env = outer_env;
    for (const auto& in : b.instrs) env[in.dst] = eval_instr(in, env);
    auto it = env.find(b.result);
    MBATCH_CHECK(it != env.end(), "reference: missing body result " + b.result);
    return it->second;
  }

  Val eval_instr(const Instr& in, std::map<std::string, Val>& env) {
    auto get = [&](const std::string& v) -> Val& {
      auto it = env.find(v);
      MBATCH_CHECK(it != env.end(), "reference: unbound " + v);
      return it->second;
    };
    switch (in.kind) {
      case Instr::Kind::kPrim: {
        std::vector<TensorHandle> ins;
        for (const auto& a : in.args) ins.push_back(get(a).t);
        Val out;
        out.kind = Val::Kind::kTensor;
        out.t = arena_.alloc(in.out_shape);
        backend::exec_primop(arena_, in.op, ins, out.t);
        return out;
      }
      case Instr::Kind::kFill: {
        Val out;
        out.kind = Val::Kind::kTensor;
        out.t = const_tensor(in.fill_shape, in.fill_value);
        return out;
      }
      case Instr::Kind::kScalarLit: {
        Val out;
        if (in.lit_is_float) {
          out.kind = Val::Kind::kFloat;
          out.f = in.lit_float;
        } else {
          out.kind = Val::Kind::kInt;
          out.i = in.lit_int;
        }
        return out;
      }
      case Instr::Kind::kScalarBin: {
        const Val& a = get(in.args[0]);
        const Val& b = get(in.args[1]);
        return scalar_bin(in.sbin_op, a, b);
      }
      case Instr::Kind::kScalarOf: {
        const Val& t = get(in.args[0]);
        Val out;
        out.kind = Val::Kind::kInt;
        out.i = static_cast<long>(arena_.ptr(t.t)[0]);
        return out;
      }
      case Instr::Kind::kCall: {
        const anf::Function& fn = model_.module.functions.at(in.callee);
        std::map<std::string, Val> callee_env;
        for (size_t i = 0; i < in.args.size(); ++i)
          callee_env[fn.params[i]] = get(in.args[i]);
        return eval_body(*fn.body, callee_env);
      }
      case Instr::Kind::kCtor: {
        Val out;
        out.kind = Val::Kind::kAdt;
        out.ctor = in.ctor_name;
        for (const auto& a : in.args) out.items.push_back(get(a));
        return out;
      }
      case Instr::Kind::kNil: {
        Val out;
        out.kind = Val::Kind::kList;
        return out;
      }
      case Instr::Kind::kCons: {
        Val out;
        out.kind = Val::Kind::kList;
        auto cell = std::make_shared<ConsCell>();
        cell->head = get(in.args[0]);
        cell->tail = get(in.args[1]).list;
        out.list = cell;
        return out;
      }
      case Instr::Kind::kTuple: {
        Val out;
        out.kind = Val::Kind::kTuple;
        for (const auto& a : in.args) out.items.push_back(get(a));
        return out;
      }
      case Instr::Kind::kProj: {
        return get(in.args[0]).items.at(in.proj_index);
      }
      case Instr::Kind::kMatch: {
        const Val& scrut = get(in.args[0]);
        for (const auto& arm : in.arms) {
          std::map<std::string, Val> arm_env = env;
          if (scrut.kind == Val::Kind::kList) {
            if (arm.ctor == "Nil" && !scrut.list) return eval_body(*arm.body, arm_env);
            if (arm.ctor == "Cons" && scrut.list) {
              arm_env[arm.binders[0]] = scrut.list->head;
              Val tail;
              tail.kind = Val::Kind::kList;
              tail.list = scrut.list->tail;
              arm_env[arm.binders[1]] = tail;
              return eval_body(*arm.body, arm_env);
            }
          } else if (scrut.kind == Val::Kind::kAdt && arm.ctor == scrut.ctor) {
            for (size_t i = 0; i < arm.binders.size(); ++i)
              arm_env[arm.binders[i]] = scrut.items[i];
            return eval_body(*arm.body, arm_env);
          }
        }
        throw Error("reference: no matching arm");
      }
      case Instr::Kind::kIf: {
        const Val& c = get(in.args[0]);
        std::map<std::string, Val> arm_env = env;
        bool taken = c.kind == Val::Kind::kFloat ? c.f != 0.0 : c.i != 0;
        return eval_body(taken ? *in.then_body : *in.else_body, arm_env);
      }
      case Instr::Kind::kMap: {
        std::vector<std::shared_ptr<ConsCell>> cursors;
        for (const auto& a : in.args) cursors.push_back(get(a).list);
        std::vector<Val> results;
        while (cursors[0]) {
          std::map<std::string, Val> body_env = env;
          for (size_t k = 0; k < cursors.size(); ++k) {
            MBATCH_CHECK(cursors[k], "@map2: list length mismatch");
            body_env[in.lambda_params[k]] = cursors[k]->head;
          }
          results.push_back(eval_body(*in.map_body, body_env));
          for (auto& c : cursors) c = c->tail;
        }
        Val out;
        out.kind = Val::Kind::kList;
        std::shared_ptr<ConsCell> list;
        for (auto it = results.rbegin(); it != results.rend(); ++it) {
          auto cell = std::make_shared<ConsCell>();
          cell->head = *it;
          cell->tail = list;
          list = cell;
        }
        out.list = list;
        return out;
      }
      case Instr::Kind::kGhost: {
        std::map<std::string, Val> body_env = env;
        return eval_body(*in.ghost_body, body_env);
      }
    }
    throw Error("unreachable");
  }

  static Val scalar_bin(const std::string& op, const Val& a, const Val& b) {
    Val out;
    bool fl = a.kind == Val::Kind::kFloat || b.kind == Val::Kind::kFloat;
    double x = a.kind == Val::Kind::kFloat ? a.f : static_cast<double>(a.i);
    double y = b.kind == Val::Kind::kFloat ? b.f : static_cast<double>(b.i);
    if (op == "+" || op == "-" || op == "*") {
      if (fl) {
        out.kind = Val::Kind::kFloat;
        out.f = op == "+" ? x + y : op == "-" ? x - y : x * y;
      } else {
        out.kind = Val::Kind::kInt;
        out.i = op == "+" ? a.i + b.i : op == "-" ? a.i - b.i : a.i * b.i;
      }
      return out;
    }
    out.kind = Val::Kind::kInt;
    if (op == "==") out.i = x == y;
    else if (op == "!=") out.i = x != y;
    else if (op == "<") out.i = x < y;
    else if (op == "<=") out.i = x <= y;
    else if (op == ">") out.i = x > y;
    else if (op == ">=") out.i = x >= y;
    else throw Error("unknown scalar op " + op);
    return out;
  }

  const CompiledModel& model_;
  Arena arena_;
  std::map<std::string, Val> param_vals_;
  std::map<std::tuple<int, int, double>, TensorHandle> const_cache_;
};

}  // namespace

std::vector<HostValue> reference_evaluate(const CompiledModel& model, const ParamEnv& params,
                                          const std::vector<InstanceInput>& inputs) {
  RefInterp interp(model, params);
  std::vector<HostValue> out;
  out.reserve(inputs.size());
  for (const auto& inst : inputs) out.push_back(interp.run_instance(inst));
  return out;
}

}  // namespace runtime
}  // namespace mbatch
