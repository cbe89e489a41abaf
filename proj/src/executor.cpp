// The lazy batching executor. Each instance runs on a fiber (a suspendable
// coroutine stack); fibers emit DFG nodes for static blocks with inline
// depth computation and suspend at tensor-value requests. When no fiber can
// progress, the pending DFG is flushed through the selected scheduler and
// the batched kernels.
#include <coroutine>
#include <functional>
#include <limits>

#include "mbatch/runtime.hpp"

namespace mbatch {
namespace runtime {

namespace {

using analysis::StaticBlock;
using anf::Body;
using anf::Instr;
using backend::Arena;
using backend::BatchedCall;
using backend::OpCode;

struct Val;
struct ConsCell;

struct Val {
  enum class Kind { kTensor, kInt, kFloat, kList, kTuple, kAdt };
  Kind kind = Kind::kInt;
  TensorRef t;
  long i = 0;
  double f = 0.0;
  std::shared_ptr<ConsCell> list;
  std::vector<Val> items;
  std::string ctor;
};

struct ConsCell {
  Val head;
  std::shared_ptr<ConsCell> tail;
};

// ---------------------------------------------------------------------------
// Coroutine task

struct Task {
  struct promise_type {
    Val value;
    std::exception_ptr exc;
    std::coroutine_handle<> continuation;

    Task get_return_object() {
      return Task{std::coroutine_handle<promise_type>::from_promise(*this)};
    }
    std::suspend_always initial_suspend() noexcept { return {}; }
    struct FinalAwaiter {
      bool await_ready() noexcept { return false; }
      std::coroutine_handle<> await_suspend(
          std::coroutine_handle<promise_type> h) noexcept {
        auto c = h.promise().continuation;
        return c ? c : std::noop_coroutine();
      }
      void await_resume() noexcept {}
    };
    FinalAwaiter final_suspend() noexcept { return {}; }
    void return_value(Val v) { value = std::move(v); }
    void unhandled_exception() { exc = std::current_exception(); }
  };

  std::coroutine_handle<promise_type> h;

  Task() = default;
  explicit Task(std::coroutine_handle<promise_type> handle) : h(handle) {}
  Task(Task&& o) noexcept : h(o.h) { o.h = nullptr; }
  Task& operator=(Task&& o) noexcept {
    if (h) h.destroy();
    h = o.h;
    o.h = nullptr;
    return *this;
  }
  Task(const Task&) = delete;
  Task& operator=(const Task&) = delete;
  ~Task() {
    if (h) h.destroy();
  }

  bool await_ready() { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> parent) {
    h.promise().continuation = parent;
    return h;
  }
  Val await_resume() {
    if (h.promise().exc) std::rethrow_exception(h.promise().exc);
    return std::move(h.promise().value);
  }
};

// ---------------------------------------------------------------------------
// Fibers

enum class FiberStatus { kRunnable, kBlockedValue, kBlockedJoin, kDone };

struct Fiber {
  int id = -1;
  int instance = -1;
  int parent = -1;
  FiberStatus status = FiberStatus::kRunnable;
  Task root;
  std::coroutine_handle<> resume_point;
  TensorRef wait_ref;
  int pending_children = 0;
  Val result;
  bool has_result = false;

  // Inline depth computation state.
  int phase = 0;
  int depth_counter = 0;
  int last_node = -1;
  int pending_ghost = -1;
};

class Executor;

struct ScalarAwait {
  Executor* ex;
  Fiber* fb;
  TensorRef ref;
  bool await_ready();
  void await_suspend(std::coroutine_handle<> h);
  long await_resume();
};

struct JoinAwait {
  Fiber* fb;
  int num_children;
  bool await_ready() { return num_children == 0; }
  void await_suspend(std::coroutine_handle<> h) {
    fb->status = FiberStatus::kBlockedJoin;
    fb->pending_children = num_children;
    fb->resume_point = h;
  }
  void await_resume() {}
};

using Env = std::map<std::string, Val>;

class Executor {
 public:
  Executor(const CompiledModel& model, const ParamEnv& params,
           const std::vector<InstanceInput>& inputs)
      : model_(model), inputs_(inputs) {
    for (const auto& blk : model_.blocks.blocks) block_by_id_[blk.id] = &blk;
    for (const auto& decl : model_.module.params) {
      if (decl.is_instance_input) continue;
      auto it = params.find(decl.name);
      MBATCH_CHECK(it != params.end(), "missing model parameter " + decl.name);
      param_vals_[decl.name] = materialize(it->second);
    }
  }

  EvalResult run() {
    const anf::Function& main_fn = model_.module.functions.at(model_.module.entry);
    for (size_t i = 0; i < inputs_.size(); ++i) {
      auto fb = std::make_unique<Fiber>();
      fb->id = static_cast<int>(fibers_.size());
      fb->instance = static_cast<int>(i);
      Env env;
      for (size_t p = 0; p < main_fn.params.size(); ++p) {
        const auto& decl = model_.module.params[p];
        if (decl.is_instance_input) {
          auto it = inputs_[i].find(decl.name);
          MBATCH_CHECK(it != inputs_[i].end(), "missing instance input " + decl.name);
          env[main_fn.params[p]] = materialize(it->second);
        } else {
          env[main_fn.params[p]] = param_vals_.at(decl.name);
        }
      }
      Fiber* raw = fb.get();
      fb->root = eval_main(*raw, main_fn, std::move(env));
      fibers_.push_back(std::move(fb));
    }

    while (true) {
      run_runnable();
      bool all_done = true;
      for (const auto& fb : fibers_) all_done = all_done && fb->status == FiberStatus::kDone;
      if (all_done) break;

      // Every live fiber is blocked: flush up to the least phase any
      // unfinished fiber is still working in, then hand values back.
      int phase_limit = std::numeric_limits<int>::max();
      for (const auto& fb : fibers_)
        if (fb->status != FiberStatus::kDone) phase_limit = std::min(phase_limit, fb->phase);
      bool executed = flush(phase_limit);
      ++trace_.sync_points;
      bool woke = false;
      for (auto& fb : fibers_) {
        if (fb->status != FiberStatus::kBlockedValue) continue;
        if (is_materialized(fb->wait_ref)) {
          fb->status = FiberStatus::kRunnable;
          woke = true;
        }
      }
      if (!woke) {
        MBATCH_CHECK(executed, "fiber deadlock: all fibers blocked with an empty pending DFG");
        MBATCH_CHECK(false, "fiber deadlock: flush made no fiber runnable");
      }
    }

    // Final flush materializes everything the outputs still need.
    flush(std::numeric_limits<int>::max());

    EvalResult res;
    for (size_t i = 0; i < inputs_.size(); ++i) res.outputs.push_back(to_host(fibers_[i]->result));
    trace_.total_nodes = static_cast<long>(nodes_.size());
    for (const auto& n : nodes_) trace_.dfg_edges += static_cast<long>(n.producers.size());
    res.trace = trace_;
    res.nodes = nodes_;
    return res;
  }

  // -- value plumbing --------------------------------------------------------

  bool is_materialized(const TensorRef& r) const {
    return r.node < 0 || nodes_[r.node].executed;
  }

  backend::TensorHandle resolve(const TensorRef& r) const {
    if (r.node < 0) return r.handle;
    const DFGNode& n = nodes_[r.node];
    MBATCH_CHECK(n.executed, "use of unmaterialized tensor (scheduling bug)");
    return n.outputs.at(r.out);
  }

  long read_scalar_int(const TensorRef& r) {
    backend::TensorHandle h = resolve(r);
    return static_cast<long>(arena_.ptr(h)[0]);
  }

 private:
  friend struct ScalarAwait;

  Val materialize(const HostValue& hv) {
    Val v;
    switch (hv.kind) {
      case HostValue::Kind::kTensor: {
        v.kind = Val::Kind::kTensor;
        backend::TensorHandle h = arena_.alloc(hv.shape);
        float* p = arena_.ptr(h);
        for (size_t k = 0; k < hv.data.size(); ++k) p[k] = hv.data[k];
        v.t = TensorRef{-1, 0, h};
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
        backend::TensorHandle h = resolve(v.t);
        std::vector<float> data(h.size());
        const float* p = arena_.ptr(h);
        for (int64_t k = 0; k < h.size(); ++k) data[k] = p[k];
        return HostValue::tensor(h.shape, std::move(data));
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

  backend::TensorHandle const_tensor(const Shape& shape, double value) {
    auto key = std::tuple(shape.rows, shape.cols, value);
    auto it = const_cache_.find(key);
    if (it != const_cache_.end()) return it->second;
    backend::TensorHandle h = arena_.alloc(shape);
    backend::exec_primop(arena_, OpCode::kFill, {}, h, static_cast<float>(value));
    const_cache_[key] = h;
    return h;
  }

  // -- fiber scheduling ------------------------------------------------------

  void run_runnable() {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (size_t i = 0; i < fibers_.size(); ++i) {
        Fiber& fb = *fibers_[i];
        if (fb.status != FiberStatus::kRunnable) continue;
        progressed = true;
        resume_fiber(fb);
      }
    }
  }

  void resume_fiber(Fiber& fb) {
    std::coroutine_handle<> h = fb.resume_point ? fb.resume_point : fb.root.h;
    fb.resume_point = nullptr;
    h.resume();
    if (fb.root.h.done()) {
      if (fb.root.h.promise().exc) std::rethrow_exception(fb.root.h.promise().exc);
      fb.result = std::move(fb.root.h.promise().value);
      fb.has_result = true;
      fb.status = FiberStatus::kDone;
      if (fb.parent >= 0) {
        Fiber& parent = *fibers_[fb.parent];
        if (--parent.pending_children == 0 &&
            parent.status == FiberStatus::kBlockedJoin)
          parent.status = FiberStatus::kRunnable;
      }
    }
    // Otherwise an awaiter already set status + resume_point.
  }

  // -- DFG construction ------------------------------------------------------

  int emit_block_node(Fiber& fb, const StaticBlock& blk, const Env& env) {
    const kernelgen::BlockBinding& binding = model_.kernels.binding_of_block.at(blk.id);
    std::vector<TensorRef> shared_ins, batched_ins;
    for (int pos : binding.shared_input_pos) shared_ins.push_back(env.at(blk.inputs[pos]).t);
    for (int pos : binding.batched_input_pos) batched_ins.push_back(env.at(blk.inputs[pos]).t);

    // Blocks whose inputs are all shared compute the same tensors for every
    // instance; run them once per distinct input tuple.
    bool all_shared = batched_ins.empty();
    std::string memo_key;
    if (all_shared) {
      for (const auto& r : shared_ins)
        memo_key += std::to_string(r.node) + ":" + std::to_string(r.out) + ":" +
                    std::to_string(r.handle.offset) + ";";
      memo_key = std::to_string(blk.id) + "|" + memo_key;
      auto it = memo_nodes_.find(memo_key);
      if (it != memo_nodes_.end()) return it->second;
    }

    DFGNode node;
    node.id = static_cast<int>(nodes_.size());
    node.sig_id = binding.sig_id;
    node.block_id = blk.id;
    node.instance = fb.instance;
    node.phase = fb.phase;
    node.ghost = false;
    node.shared_ins = shared_ins;
    node.batched_ins = batched_ins;
    for (const auto& r : shared_ins)
      if (r.node >= 0) node.producers.push_back(r.node);
    for (const auto& r : batched_ins)
      if (r.node >= 0) node.producers.push_back(r.node);
    if (fb.pending_ghost >= 0) {
      node.producers.push_back(fb.pending_ghost);
      fb.pending_ghost = -1;
    }

    // Pending producers in the same phase always push the depth past their
    // own (static hints may otherwise collide when a hoisted block feeds
    // another invocation of itself).
    auto producer_floor = [&](int base) {
      int d = base;
      for (int p : node.producers) {
        const DFGNode& prod = nodes_[p];
        if (!prod.executed && prod.phase == node.phase) d = std::max(d, prod.depth + 1);
      }
      return d;
    };
    auto hoisted = model_.hoist.static_depth.find(blk.id);
    if (model_.opts.hoist && hoisted != model_.hoist.static_depth.end()) {
      node.depth = producer_floor(hoisted->second);
    } else {
      node.depth = producer_floor(fb.depth_counter + 1);
      fb.depth_counter = node.depth;
    }
    fb.last_node = node.id;
    nodes_.push_back(std::move(node));
    if (all_shared) memo_nodes_[memo_key] = static_cast<int>(nodes_.size()) - 1;
    return static_cast<int>(nodes_.size()) - 1;
  }

  void emit_ghosts(Fiber& fb, int count) {
    for (int k = 0; k < count; ++k) {
      DFGNode node;
      node.id = static_cast<int>(nodes_.size());
      node.sig_id = model_.kernels.ghost_sig;
      node.instance = fb.instance;
      node.phase = fb.phase;
      node.ghost = true;
      node.depth = ++fb.depth_counter;
      int prev = fb.pending_ghost >= 0 ? fb.pending_ghost : fb.last_node;
      if (prev >= 0 && !nodes_[prev].executed) node.producers.push_back(prev);
      fb.pending_ghost = node.id;
      nodes_.push_back(std::move(node));
    }
  }

  // -- interpretation --------------------------------------------------------

  Task eval_main(Fiber& fb, const anf::Function& fn, Env env) {
    Val v = co_await eval_body(fb, *fn.body, std::move(env), /*is_main_top=*/true);
    co_return v;
  }

  Task eval_call(Fiber& fb, const std::string& callee, std::vector<Val> args) {
    const anf::Function& fn = model_.module.functions.at(callee);
    Env env;
    for (size_t i = 0; i < args.size(); ++i) env[fn.params[i]] = std::move(args[i]);
    Val v = co_await eval_body(fb, *fn.body, std::move(env), false);
    co_return v;
  }

  Task eval_body(Fiber& fb, const Body& b, Env env, bool is_main_top) {
    std::map<int, int> emitted;  // block id -> node id, this visit
    for (size_t idx = 0; idx < b.instrs.size(); ++idx) {
      const Instr& in = b.instrs[idx];
      if (is_main_top && idx < model_.module.main_stage_of_instr.size()) {
        int stage = model_.module.main_stage_of_instr[idx];
        int phase = model_.phases.stage_phase.at(stage);
        if (phase != fb.phase) {
          MBATCH_CHECK(phase > fb.phase, "phases must be non-decreasing");
          fb.phase = phase;
          fb.depth_counter = 0;
          fb.last_node = -1;
          fb.pending_ghost = -1;
        }
      }
      switch (in.kind) {
        case Instr::Kind::kPrim: {
          int blk_id = model_.blocks.block_of_site.at(in.prim_site);
          const StaticBlock& blk = *block_by_id_.at(blk_id);
          if (blk.trigger_site != in.prim_site || emitted.count(blk_id)) break;
          int node = emit_block_node(fb, blk, env);
          emitted[blk_id] = node;
          for (size_t k = 0; k < blk.outputs.size(); ++k) {
            Val v;
            v.kind = Val::Kind::kTensor;
            v.t = TensorRef{node, static_cast<int>(k), {}};
            env[blk.outputs[k]] = std::move(v);
          }
          break;
        }
        case Instr::Kind::kFill: {
          Val v;
          v.kind = Val::Kind::kTensor;
          v.t = TensorRef{-1, 0, const_tensor(in.fill_shape, in.fill_value)};
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kScalarLit: {
          Val v;
          if (in.lit_is_float) {
            v.kind = Val::Kind::kFloat;
            v.f = in.lit_float;
          } else {
            v.kind = Val::Kind::kInt;
            v.i = in.lit_int;
          }
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kScalarBin: {
          env[in.dst] = scalar_bin(in.sbin_op, env.at(in.args[0]), env.at(in.args[1]));
          break;
        }
        case Instr::Kind::kScalarOf: {
          const Val& tv = env.at(in.args[0]);
          long value = co_await ScalarAwait{this, &fb, tv.t};
          Val v;
          v.kind = Val::Kind::kInt;
          v.i = value;
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kCall: {
          // A run of adjacent same-group calls forks child fibers.
          if (in.concurrent_group) {
            size_t end = idx;
            while (end < b.instrs.size() && b.instrs[end].kind == Instr::Kind::kCall &&
                   b.instrs[end].concurrent_group == in.concurrent_group)
              ++end;
            if (end - idx > 1) {
              std::vector<int> children;
              for (size_t k = idx; k < end; ++k) {
                const Instr& call = b.instrs[k];
                std::vector<Val> args;
                for (const auto& a : call.args) args.push_back(env.at(a));
                auto child = std::make_unique<Fiber>();
                child->id = static_cast<int>(fibers_.size());
                child->instance = fb.instance;
                child->parent = fb.id;
                child->phase = fb.phase;
                child->depth_counter = fb.depth_counter;
                Fiber* raw = child.get();
                child->root = eval_call(*raw, call.callee, std::move(args));
                children.push_back(child->id);
                fibers_.push_back(std::move(child));
              }
              co_await JoinAwait{&fb, static_cast<int>(children.size())};
              for (size_t k = 0; k < children.size(); ++k) {
                Fiber& child = *fibers_[children[k]];
                MBATCH_CHECK(child.has_result, "joined child fiber without a result");
                env[b.instrs[idx + k].dst] = child.result;
                fb.depth_counter = std::max(fb.depth_counter, child.depth_counter);
              }
              idx = end - 1;
              break;
            }
          }
          std::vector<Val> args;
          for (const auto& a : in.args) args.push_back(env.at(a));
          env[in.dst] = co_await eval_call(fb, in.callee, std::move(args));
          break;
        }
        case Instr::Kind::kCtor: {
          Val v;
          v.kind = Val::Kind::kAdt;
          v.ctor = in.ctor_name;
          for (const auto& a : in.args) v.items.push_back(env.at(a));
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kNil: {
          Val v;
          v.kind = Val::Kind::kList;
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kCons: {
          Val v;
          v.kind = Val::Kind::kList;
          auto cell = std::make_shared<ConsCell>();
          cell->head = env.at(in.args[0]);
          cell->tail = env.at(in.args[1]).list;
          v.list = cell;
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kTuple: {
          Val v;
          v.kind = Val::Kind::kTuple;
          for (const auto& a : in.args) v.items.push_back(env.at(a));
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kProj: {
          env[in.dst] = env.at(in.args[0]).items.at(in.proj_index);
          break;
        }
        case Instr::Kind::kMatch: {
          const Val scrut = env.at(in.args[0]);
          bool handled = false;
          for (const auto& arm : in.arms) {
            Env arm_env;
            if (scrut.kind == Val::Kind::kList) {
              if (arm.ctor == "Nil" && !scrut.list) {
                arm_env = env;
              } else if (arm.ctor == "Cons" && scrut.list) {
                arm_env = env;
                arm_env[arm.binders[0]] = scrut.list->head;
                Val tail;
                tail.kind = Val::Kind::kList;
                tail.list = scrut.list->tail;
                arm_env[arm.binders[1]] = std::move(tail);
              } else {
                continue;
              }
            } else if (scrut.kind == Val::Kind::kAdt && arm.ctor == scrut.ctor) {
              arm_env = env;
              for (size_t i = 0; i < arm.binders.size(); ++i)
                arm_env[arm.binders[i]] = scrut.items[i];
            } else {
              continue;
            }
            env[in.dst] = co_await eval_body(fb, *arm.body, std::move(arm_env), false);
            handled = true;
            break;
          }
          MBATCH_CHECK(handled, "no matching arm at runtime");
          break;
        }
        case Instr::Kind::kIf: {
          const Val& c = env.at(in.args[0]);
          bool taken = c.kind == Val::Kind::kFloat ? c.f != 0.0 : c.i != 0;
          env[in.dst] =
              co_await eval_body(fb, taken ? *in.then_body : *in.else_body, env, false);
          break;
        }
        case Instr::Kind::kMap: {
          // All element bodies share one starting depth; the counter resumes
          // at the deepest element.
          std::vector<std::shared_ptr<ConsCell>> cursors;
          for (const auto& a : in.args) cursors.push_back(env.at(a).list);
          int start = fb.depth_counter;
          int deepest = start;
          std::vector<Val> results;
          while (cursors[0]) {
            Env body_env = env;
            for (size_t k = 0; k < cursors.size(); ++k) {
              MBATCH_CHECK(cursors[k], "@map2: list length mismatch");
              body_env[in.lambda_params[k]] = cursors[k]->head;
            }
            fb.depth_counter = start;
            results.push_back(co_await eval_body(fb, *in.map_body, std::move(body_env), false));
            deepest = std::max(deepest, fb.depth_counter);
            for (auto& cur : cursors) cur = cur->tail;
          }
          fb.depth_counter = deepest;
          Val v;
          v.kind = Val::Kind::kList;
          std::shared_ptr<ConsCell> list;
          for (auto it = results.rbegin(); it != results.rend(); ++it) {
            auto cell = std::make_shared<ConsCell>();
            cell->head = std::move(*it);
            cell->tail = list;
            list = cell;
          }
          v.list = list;
          env[in.dst] = std::move(v);
          break;
        }
        case Instr::Kind::kGhost: {
          emit_ghosts(fb, in.ghost_count);
          env[in.dst] = co_await eval_body(fb, *in.ghost_body, env, false);
          break;
        }
      }
    }
    auto it = env.find(b.result);
    MBATCH_CHECK(it != env.end(), "missing body result " + b.result);
    co_return it->second;
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

  // -- flushing --------------------------------------------------------------

  // Executes pending nodes whose phase is within the limit. Returns whether
  // anything ran.
  bool flush(int phase_limit) {
    std::vector<const DFGNode*> window;
    for (const auto& n : nodes_)
      if (!n.executed && n.phase <= phase_limit) window.push_back(&n);
    if (window.empty()) return false;

    trace_.flush_boundaries.push_back(static_cast<int>(trace_.batches.size()));
    std::vector<BatchRecord> batches;
    if (model_.opts.scheduler == ExecOptions::Scheduler::kDepth) {
      batches = schedule_depth(window, trace_.scheduler_ops);
    } else {
      // Agenda scheduling still honors phase gating: one agenda per phase.
      std::map<int, std::vector<const DFGNode*>> by_phase;
      for (const DFGNode* n : window) by_phase[n->phase].push_back(n);
      for (auto& [phase, group] : by_phase) {
        auto got = schedule_agenda(group, trace_.scheduler_ops);
        for (auto& b : got) batches.push_back(std::move(b));
      }
    }

    for (auto& batch : batches) {
      if (batch.ghost) {
        for (int id : batch.node_ids) nodes_[id].executed = true;
        trace_.batches.push_back(std::move(batch));
        continue;
      }
      const backend::ExecutablePlan& plan = model_.kernels.plan(batch.sig);
      std::vector<BatchedCall> calls;
      calls.reserve(batch.node_ids.size());
      for (int id : batch.node_ids) {
        DFGNode& n = nodes_[id];
        BatchedCall call;
        for (const auto& r : n.shared_ins) call.shared.push_back(resolve(r));
        for (const auto& r : n.batched_ins) call.batched.push_back(resolve(r));
        calls.push_back(std::move(call));
      }
      backend::BatchedResult out = exec_batched(arena_, plan, calls, model_.opts.gather);
      trace_.gather_bytes += out.gather_bytes;
      ++trace_.kernel_launches;
      for (size_t i = 0; i < batch.node_ids.size(); ++i) {
        DFGNode& n = nodes_[batch.node_ids[i]];
        n.outputs = out.outputs[i];
        n.executed = true;
      }
      trace_.batches.push_back(std::move(batch));
    }
    return true;
  }

  const CompiledModel& model_;
  const std::vector<InstanceInput>& inputs_;
  Arena arena_;
  std::map<std::string, Val> param_vals_;
  std::map<std::tuple<int, int, double>, backend::TensorHandle> const_cache_;
  std::map<int, const StaticBlock*> block_by_id_;
  std::vector<std::unique_ptr<Fiber>> fibers_;
  std::vector<DFGNode> nodes_;
  std::map<std::string, int> memo_nodes_;
  ScheduleTrace trace_;
};

bool ScalarAwait::await_ready() { return ex->is_materialized(ref); }
void ScalarAwait::await_suspend(std::coroutine_handle<> h) {
  fb->status = FiberStatus::kBlockedValue;
  fb->wait_ref = ref;
  fb->resume_point = h;
}
long ScalarAwait::await_resume() { return ex->read_scalar_int(ref); }

}  // namespace

EvalResult evaluate_batch(const CompiledModel& model, const ParamEnv& params,
                          const std::vector<InstanceInput>& inputs) {
  MBATCH_CHECK(!inputs.empty(), "evaluate_batch: need at least one instance");
  Executor ex(model, params, inputs);
  return ex.run();
}

}  // namespace runtime
}  // namespace mbatch
