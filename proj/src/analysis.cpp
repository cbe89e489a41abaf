#include "mbatch/analysis.hpp"

#include <algorithm>
#include <functional>
#include <limits>

namespace mbatch {
namespace analysis {

using anf::Body;
using anf::Instr;
using backend::OpCode;

Taint Taint::join(const Taint& a, const Taint& b) {
  Taint r;
  r.level = a.level >= b.level ? a.level : b.level;
  if (r.level == TaintLevel::kParam) {
    r.provenance = a.provenance;
    r.provenance.insert(b.provenance.begin(), b.provenance.end());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Call graph

CallGraphInfo call_graph(const Module& mod) {
  CallGraphInfo info;
  std::function<void(const std::string&, const Body&)> scan = [&](const std::string& f,
                                                                  const Body& b) {
    for (const auto& in : b.instrs) {
      if (in.kind == Instr::Kind::kCall) info.callees[f].insert(in.callee);
      for (const auto& arm : in.arms) scan(f, *arm.body);
      if (in.then_body) scan(f, *in.then_body);
      if (in.else_body) scan(f, *in.else_body);
      if (in.map_body) scan(f, *in.map_body);
      if (in.ghost_body) scan(f, *in.ghost_body);
    }
  };
  for (const auto& [name, fn] : mod.functions) {
    info.callees[name];
    scan(name, *fn.body);
  }

  // Tarjan SCC, iterative enough at this scale to do recursively.
  std::map<std::string, int> index, low;
  std::vector<std::string> stack;
  std::map<std::string, bool> on_stack;
  int next_index = 0;
  std::function<void(const std::string&)> strongconnect = [&](const std::string& v) {
    index[v] = low[v] = next_index++;
    stack.push_back(v);
    on_stack[v] = true;
    for (const auto& w : info.callees[v]) {
      if (!mod.functions.count(w)) continue;
      if (!index.count(w)) {
        strongconnect(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      int id = static_cast<int>(info.scc_cyclic.size());
      bool cyclic = false;
      std::vector<std::string> members;
      while (true) {
        std::string w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        info.scc_of[w] = id;
        members.push_back(w);
        if (w == v) break;
      }
      if (members.size() > 1) cyclic = true;
      for (const auto& m : members)
        if (info.callees[m].count(m)) cyclic = true;
      info.scc_cyclic.push_back(cyclic);
    }
  };
  for (const auto& [name, fn] : mod.functions)
    if (!index.count(name)) strongconnect(name);
  return info;
}

// ---------------------------------------------------------------------------
// Taint analysis

namespace {

class TaintAnalysis {
 public:
  TaintAnalysis(const Module& mod) : mod_(mod), cg_(call_graph(mod)) {
    // Map each call site to its owning function.
    std::function<void(const std::string&, const Body&)> scan = [&](const std::string& f,
                                                                    const Body& b) {
      for (const auto& in : b.instrs) {
        if (in.kind == Instr::Kind::kCall) site_owner_[in.call_site] = f;
        for (const auto& arm : in.arms) scan(f, *arm.body);
        if (in.then_body) scan(f, *in.then_body);
        if (in.else_body) scan(f, *in.else_body);
        if (in.map_body) scan(f, *in.map_body);
        if (in.ghost_body) scan(f, *in.ghost_body);
      }
    };
    for (const auto& [name, fn] : mod_.functions) scan(name, *fn.body);
  }

  ReuseReport run() {
    // Entry context: model params are kParam tainted with their own name,
    // per-instance inputs are kInput.
    CallContext entry{mod_.entry, -1};
    const anf::Function& main_fn = mod_.functions.at(mod_.entry);
    std::vector<Taint> entry_taints;
    for (size_t i = 0; i < main_fn.params.size(); ++i) {
      const auto& decl = mod_.params[i];
      Taint t;
      if (decl.is_instance_input) {
        t.level = TaintLevel::kInput;
      } else {
        t.level = TaintLevel::kParam;
        t.provenance = {decl.name};
      }
      entry_taints.push_back(std::move(t));
    }
    param_taint_[entry] = entry_taints;

    bool changed = true;
    int guard = 0;
    while (changed) {
      MBATCH_CHECK(++guard < 1000, "taint analysis failed to converge");
      changed = false;
      // std::map iteration order keeps this deterministic.
      auto snapshot = param_taint_;
      for (const auto& [ctx, params] : snapshot) {
        Taint ret = analyze_context(ctx, /*record=*/false, &changed);
        auto it = ret_taint_.find(ctx);
        if (it == ret_taint_.end() || !(it->second == ret)) {
          ret_taint_[ctx] = ret;
          changed = true;
        }
      }
    }

    ReuseReport rep;
    for (const auto& [ctx, params] : param_taint_) {
      record_ctx_ = &rep.by_context[ctx];
      analyze_context(ctx, /*record=*/true, nullptr);
      record_ctx_ = nullptr;
    }
    // Joined classifications per prim site.
    for (const auto& [ctx, sites] : rep.by_context) {
      for (const auto& [site, classes] : sites) {
        auto& merged = rep.merged[site];
        if (merged.empty()) {
          merged = classes;
        } else {
          for (size_t i = 0; i < classes.size(); ++i) {
            merged[i].taint = Taint::join(merged[i].taint, classes[i].taint);
            merged[i].shared = merged[i].taint.level == TaintLevel::kParam;
          }
        }
      }
    }
    // Unreachable functions.
    std::set<std::string> reached;
    for (const auto& [ctx, params] : param_taint_) reached.insert(ctx.callee);
    for (const auto& [name, fn] : mod_.functions)
      if (!reached.count(name)) rep.skipped.push_back(name);
    // Conflicts across external contexts.
    compute_conflicts(rep);
    return rep;
  }

 private:
  using Env = std::map<std::string, Taint>;

  bool is_external(const CallContext& ctx) const {
    if (ctx.caller_site < 0) return true;
    const std::string& owner = site_owner_.at(ctx.caller_site);
    return cg_.scc_of.at(owner) != cg_.scc_of.at(ctx.callee);
  }

  void compute_conflicts(ReuseReport& rep) const {
    std::map<std::string, std::vector<const std::map<int, std::vector<ArgClass>>*>> per_func;
    for (const auto& [ctx, sites] : rep.by_context)
      if (is_external(ctx)) per_func[ctx.callee].push_back(&sites);
    for (const auto& [fname, ctxs] : per_func) {
      if (ctxs.size() < 2) continue;
      int conflicts = 0;
      const auto& first = *ctxs[0];
      for (const auto& [site, classes] : first) {
        for (size_t k = 1; k < ctxs.size(); ++k) {
          auto it = ctxs[k]->find(site);
          if (it == ctxs[k]->end()) continue;
          for (size_t i = 0; i < classes.size(); ++i) {
            const ArgClass& a = classes[i];
            const ArgClass& b = it->second[i];
            bool mismatch = a.shared != b.shared ||
                            (a.shared && a.taint.provenance != b.taint.provenance);
            if (mismatch) ++conflicts;
          }
        }
      }
      if (conflicts) rep.conflicts[fname] = conflicts;
    }
  }

  Taint analyze_context(const CallContext& ctx, bool record, bool* changed) {
    const anf::Function& fn = mod_.functions.at(ctx.callee);
    Env env;
    const auto& params = param_taint_.at(ctx);
    for (size_t i = 0; i < fn.params.size() && i < params.size(); ++i)
      env[fn.params[i]] = params[i];
    return analyze_body(*fn.body, env, ctx, record, changed);
  }

  Taint analyze_body(const Body& b, Env env, const CallContext& ctx, bool record,
                     bool* changed) {
    for (const auto& in : b.instrs) {
      switch (in.kind) {
        case Instr::Kind::kPrim: {
          Taint t;
          std::vector<ArgClass> classes;
          for (const auto& a : in.args) {
            const Taint& at = env[a];
            ArgClass c;
            c.taint = at;
            c.shared = at.level == TaintLevel::kParam;
            classes.push_back(c);
            t = Taint::join(t, at);
          }
          if (record && record_ctx_) (*record_ctx_)[in.prim_site] = std::move(classes);
          env[in.dst] = t;
          break;
        }
        case Instr::Kind::kFill:
        case Instr::Kind::kScalarLit:
        case Instr::Kind::kNil:
          env[in.dst] = Taint{};  // constant
          break;
        case Instr::Kind::kScalarBin:
        case Instr::Kind::kCons:
        case Instr::Kind::kTuple:
        case Instr::Kind::kCtor:
        case Instr::Kind::kScalarOf:
        case Instr::Kind::kProj: {
          Taint t;
          for (const auto& a : in.args) t = Taint::join(t, env[a]);
          env[in.dst] = t;
          break;
        }
        case Instr::Kind::kCall: {
          CallContext sub{in.callee, in.call_site};
          std::vector<Taint> args;
          for (const auto& a : in.args) args.push_back(env[a]);
          auto& slot = param_taint_[sub];
          if (slot.empty()) {
            slot = args;
            if (changed) *changed = true;
          } else {
            for (size_t i = 0; i < args.size(); ++i) {
              Taint j = Taint::join(slot[i], args[i]);
              if (!(j == slot[i])) {
                slot[i] = j;
                if (changed) *changed = true;
              }
            }
          }
          env[in.dst] = ret_taint_.count(sub) ? ret_taint_.at(sub) : Taint{};
          break;
        }
        case Instr::Kind::kMatch: {
          Taint scrut = env[in.args[0]];
          Taint out;
          for (const auto& arm : in.arms) {
            Env arm_env = env;
            for (const auto& bname : arm.binders) arm_env[bname] = scrut;
            out = Taint::join(out, analyze_body(*arm.body, arm_env, ctx, record, changed));
          }
          env[in.dst] = Taint::join(out, scrut);
          break;
        }
        case Instr::Kind::kIf: {
          Taint cond = env[in.args[0]];
          Taint t = analyze_body(*in.then_body, env, ctx, record, changed);
          Taint f = analyze_body(*in.else_body, env, ctx, record, changed);
          env[in.dst] = Taint::join(Taint::join(t, f), cond);
          break;
        }
        case Instr::Kind::kMap: {
          Env body_env = env;
          Taint lists;
          for (size_t i = 0; i < in.args.size(); ++i) {
            body_env[in.lambda_params[i]] = env[in.args[i]];
            lists = Taint::join(lists, env[in.args[i]]);
          }
          Taint bt = analyze_body(*in.map_body, body_env, ctx, record, changed);
          env[in.dst] = Taint::join(bt, lists);
          break;
        }
        case Instr::Kind::kGhost:
          env[in.dst] = analyze_body(*in.ghost_body, env, ctx, record, changed);
          break;
      }
    }
    return env.count(b.result) ? env[b.result] : Taint{};
  }

  const Module& mod_;
  CallGraphInfo cg_;
  std::map<int, std::string> site_owner_;
  std::map<CallContext, std::vector<Taint>> param_taint_;
  std::map<CallContext, Taint> ret_taint_;
  std::map<int, std::vector<ArgClass>>* record_ctx_ = nullptr;
};

}  // namespace

ReuseReport taint_shared_params(const ir::TypedProgram& tp, const Module& mod) {
  (void)tp;
  return TaintAnalysis(mod).run();
}

// ---------------------------------------------------------------------------
// Duplication

namespace {

// Clones an expr tree with fresh ids, copying recorded types across.
ir::ExprPtr clone_typed(const ir::ExprPtr& e, ir::TypedProgram& tp) {
  if (!e) return nullptr;
  ir::ExprPtr c = std::make_shared<ir::Expr>(*e);
  c->id = tp.program.next_expr_id++;
  if (e->kind == ir::Expr::Kind::kCall) c->call_site_id = tp.program.next_call_site++;
  tp.expr_types.resize(tp.program.next_expr_id);
  tp.expr_types[c->id] = tp.expr_types[e->id];
  for (auto& a : c->args) a = clone_typed(a, tp);
  c->bound = clone_typed(e->bound, tp);
  c->body = clone_typed(e->body, tp);
  c->scrutinee = clone_typed(e->scrutinee, tp);
  for (auto& arm : c->arms) arm.body = clone_typed(arm.body, tp);
  c->cond = clone_typed(e->cond, tp);
  c->then_e = clone_typed(e->then_e, tp);
  c->else_e = clone_typed(e->else_e, tp);
  c->tuple_e = clone_typed(e->tuple_e, tp);
  c->lambda_body = clone_typed(e->lambda_body, tp);
  for (auto& l : c->map_lists) l = clone_typed(l, tp);
  c->ghost_body = clone_typed(e->ghost_body, tp);
  return c;
}

void walk_exprs(const ir::ExprPtr& e, const std::function<void(ir::Expr&)>& f) {
  if (!e) return;
  f(*e);
  for (const auto& a : e->args) walk_exprs(a, f);
  walk_exprs(e->bound, f);
  walk_exprs(e->body, f);
  walk_exprs(e->scrutinee, f);
  for (const auto& arm : e->arms) walk_exprs(arm.body, f);
  walk_exprs(e->cond, f);
  walk_exprs(e->then_e, f);
  walk_exprs(e->else_e, f);
  walk_exprs(e->tuple_e, f);
  walk_exprs(e->lambda_body, f);
  for (const auto& l : e->map_lists) walk_exprs(l, f);
  walk_exprs(e->ghost_body, f);
}

std::vector<ir::Annotation> rebuild_group_annotations(const ir::ExprPtr& body) {
  std::map<int, std::vector<int>> groups;
  walk_exprs(body, [&](ir::Expr& e) {
    if (e.kind == ir::Expr::Kind::kCall && e.concurrent_group)
      groups[*e.concurrent_group].push_back(e.call_site_id);
  });
  std::vector<ir::Annotation> out;
  for (auto& [gid, sites] : groups) {
    ir::Annotation a;
    a.kind = ir::Annotation::Kind::kConcurrentCalls;
    a.group_id = gid;
    a.call_site_ids = sites;
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

DuplicationResult duplicate_for_reuse(const ir::TypedProgram& tp_in, int clone_cap) {
  DuplicationResult res;
  res.program.program = clone_program(tp_in.program);
  res.program.expr_types = tp_in.expr_types;
  ir::TypedProgram& tp = res.program;

  int clone_counter = 0;
  while (true) {
    res.module = anf::build_module(tp);
    res.report = taint_shared_params(tp, res.module);

    // Hoist-lineage conflicts also force duplication: a helper reached from
    // both a static and a dynamic lineage would lose its static depths.
    CallGraphInfo cg = call_graph(res.module);
    std::map<int, std::string> site_owner;
    {
      std::function<void(const std::string&, const Body&)> scan =
          [&](const std::string& f, const Body& b) {
            for (const auto& in : b.instrs) {
              if (in.kind == Instr::Kind::kCall) site_owner[in.call_site] = f;
              for (const auto& arm : in.arms) scan(f, *arm.body);
              if (in.then_body) scan(f, *in.then_body);
              if (in.else_body) scan(f, *in.else_body);
              if (in.map_body) scan(f, *in.map_body);
              if (in.ghost_body) scan(f, *in.ghost_body);
            }
          };
      for (const auto& [name, fn] : res.module.functions) scan(name, *fn.body);
    }
    std::map<CallContext, std::vector<int>> ctx_avail;
    compute_site_avail(res.module, &ctx_avail);
    std::map<std::string, int> avail_conflicts;
    {
      std::map<std::string, std::vector<const std::vector<int>*>> per_func;
      for (const auto& [ctx, avails] : ctx_avail) {
        bool external = ctx.caller_site < 0 ||
                        cg.scc_of.at(site_owner.at(ctx.caller_site)) !=
                            cg.scc_of.at(ctx.callee);
        if (external) per_func[ctx.callee].push_back(&avails);
      }
      for (const auto& [fname, lists] : per_func) {
        if (lists.size() < 2) continue;
        for (size_t k = 1; k < lists.size(); ++k) {
          for (size_t i = 0; i < lists[0]->size() && i < lists[k]->size(); ++i) {
            bool a = (*lists[0])[i] >= kDynamicDepth;
            bool b = (*lists[k])[i] >= kDynamicDepth;
            if (a != b) ++avail_conflicts[fname];
          }
        }
      }
    }

    std::string target;
    if (!res.report.conflicts.empty())
      target = res.report.conflicts.begin()->first;
    else if (!avail_conflicts.empty())
      target = avail_conflicts.begin()->first;
    else
      break;
    int target_scc = cg.scc_of.at(target);
    std::vector<std::string> scc_members;
    for (const auto& [name, id] : cg.scc_of)
      if (id == target_scc) scc_members.push_back(name);
    std::sort(scc_members.begin(), scc_members.end());

    // External contexts of the target, in deterministic order.
    std::vector<int> external_sites;
    for (const auto& [ctx, sites] : res.report.by_context) {
      if (ctx.callee != target || ctx.caller_site < 0) continue;
      // Find the owning function of the site; skip SCC-internal calls.
      std::string owner;
      for (const auto& [fname, fd] : tp.program.functions) {
        walk_exprs(fd.body, [&](ir::Expr& e) {
          if (e.kind == ir::Expr::Kind::kCall && e.call_site_id == ctx.caller_site)
            owner = fname;
        });
        if (!owner.empty()) break;
      }
      if (!owner.empty() && cg.scc_of.at(owner) != target_scc)
        external_sites.push_back(ctx.caller_site);
    }
    std::sort(external_sites.begin(), external_sites.end());
    MBATCH_CHECK(external_sites.size() >= 2, "conflicting function lacks external contexts");

    for (size_t k = 0; k < external_sites.size(); ++k) {
      // Clone the whole recursion group for this context.
      std::map<std::string, std::string> rename;
      for (const auto& m : scc_members) {
        rename[m] = m + "__c" + std::to_string(clone_counter);
        ++clone_counter;
        if (clone_counter > clone_cap)
          throw Error("clone budget exceeded (" + std::to_string(clone_cap) +
                      "): pathological context explosion");
      }
      for (const auto& m : scc_members) {
        const ir::FuncDef& orig = tp.program.functions.at(m);
        ir::FuncDef copy;
        copy.name = rename[m];
        copy.param_names = orig.param_names;
        copy.param_types = orig.param_types;
        copy.ret_type = orig.ret_type;
        copy.body = clone_typed(orig.body, tp);
        walk_exprs(copy.body, [&](ir::Expr& e) {
          if (e.kind == ir::Expr::Kind::kCall && rename.count(e.callee))
            e.callee = rename.at(e.callee);
        });
        copy.annotations = rebuild_group_annotations(copy.body);
        tp.program.functions[copy.name] = std::move(copy);
      }
      // Retarget the external call site to this context's copy.
      for (auto& [fname, fd] : tp.program.functions) {
        walk_exprs(fd.body, [&](ir::Expr& e) {
          if (e.kind == ir::Expr::Kind::kCall && e.call_site_id == external_sites[k])
            e.callee = rename.at(target);
        });
      }
    }
    // The originals are now unreachable; drop them.
    for (const auto& m : scc_members) tp.program.functions.erase(m);
    res.clones_made = clone_counter;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Static availability depths per prim site

// Like the taint analysis, this is 1-context sensitive: a pure helper called
// once on program inputs and once on intermediate tensors must not poison
// the static lineage.
std::map<int, int> compute_site_avail(const Module& mod,
                                      std::map<CallContext, std::vector<int>>* param_avail_out) {
  constexpr int kCap = 64;  // growth beyond this means recursion-carried
  std::map<int, int> site_avail;
  std::map<CallContext, std::vector<int>> param_avail;
  std::map<CallContext, int> ret_avail;

  CallContext entry{mod.entry, -1};
  const anf::Function& main_fn = mod.functions.at(mod.entry);
  param_avail[entry] = std::vector<int>(main_fn.params.size(), -1);

  auto clamp = [&](int v) { return v > kCap ? kDynamicDepth : v; };

  bool changed = true;
  int guard = 0;
  while (changed) {
    MBATCH_CHECK(++guard < 5000, "hoist analysis failed to converge");
    changed = false;
    auto snapshot = param_avail;
    for (const auto& [ctx, pav] : snapshot) {
      const anf::Function& fn = mod.functions.at(ctx.callee);
      std::map<std::string, int> env;
      for (size_t i = 0; i < fn.params.size() && i < pav.size(); ++i)
        env[fn.params[i]] = pav[i];
      std::function<int(const Body&)> eval = [&](const Body& b) -> int {
        for (const auto& in : b.instrs) {
          auto get = [&](const std::string& v) {
            auto it = env.find(v);
            return it == env.end() ? -1 : it->second;
          };
          switch (in.kind) {
            case Instr::Kind::kPrim: {
              int d = -1;
              for (const auto& a : in.args) d = std::max(d, get(a));
              d = d >= kDynamicDepth ? kDynamicDepth : clamp(d + 1);
              auto it = site_avail.find(in.prim_site);
              if (it == site_avail.end() || d > it->second) {
                site_avail[in.prim_site] = d;
                changed = true;
              }
              env[in.dst] = d;
              break;
            }
            case Instr::Kind::kFill:
            case Instr::Kind::kScalarLit:
            case Instr::Kind::kNil:
              env[in.dst] = -1;
              break;
            case Instr::Kind::kCall: {
              CallContext sub{in.callee, in.call_site};
              auto& slot = param_avail[sub];
              const anf::Function& callee = mod.functions.at(in.callee);
              if (slot.empty()) {
                slot = std::vector<int>(callee.params.size(), -1);
                changed = true;
              }
              for (size_t i = 0; i < in.args.size(); ++i) {
                int v = std::max(slot[i], get(in.args[i]));
                if (v != slot[i]) {
                  slot[i] = v;
                  changed = true;
                }
              }
              env[in.dst] = ret_avail.count(sub) ? ret_avail.at(sub) : -1;
              break;
            }
            case Instr::Kind::kMatch: {
              int scrut = get(in.args[0]);
              int out = -1;
              for (const auto& arm : in.arms) {
                for (const auto& bn : arm.binders) env[bn] = scrut;
                out = std::max(out, eval(*arm.body));
              }
              env[in.dst] = std::max(out, scrut);
              break;
            }
            case Instr::Kind::kIf: {
              int out = std::max(eval(*in.then_body), eval(*in.else_body));
              env[in.dst] = std::max(out, get(in.args[0]));
              break;
            }
            case Instr::Kind::kMap: {
              for (size_t i = 0; i < in.args.size(); ++i)
                env[in.lambda_params[i]] = get(in.args[i]);
              env[in.dst] = eval(*in.map_body);
              break;
            }
            case Instr::Kind::kGhost:
              env[in.dst] = eval(*in.ghost_body);
              break;
            default: {
              int t = -1;
              for (const auto& a : in.args) t = std::max(t, get(a));
              env[in.dst] = t;
              break;
            }
          }
        }
        auto it = env.find(b.result);
        return it == env.end() ? -1 : it->second;
      };
      int ret = clamp(eval(*fn.body));
      auto it = ret_avail.find(ctx);
      int prev = it == ret_avail.end() ? std::numeric_limits<int>::min() : it->second;
      if (ret > prev) {
        ret_avail[ctx] = ret;
        changed = true;
      }
    }
  }
  if (param_avail_out) *param_avail_out = param_avail;
  return site_avail;
}

// ---------------------------------------------------------------------------
// Grain-size coarsening

namespace {

struct BlockBuilder {
  const Module& mod;
  const std::map<int, int>& site_avail;
  bool coarsen;
  BlockInfo out;

  // All uses of each var across the whole function, plus body results.
  void collect_uses(const Body& b) {
    for (const auto& in : b.instrs) {
      for (const auto& a : in.args) escaping_uses[a]++;
      for (const auto& arm : in.arms) collect_uses(*arm.body);
      if (in.then_body) collect_uses(*in.then_body);
      if (in.else_body) collect_uses(*in.else_body);
      if (in.map_body) collect_uses(*in.map_body);
      if (in.ghost_body) collect_uses(*in.ghost_body);
    }
    results.insert(b.result);
  }

  std::map<std::string, int> escaping_uses;
  std::set<std::string> results;

  void run(const std::string& fname) {
    const anf::Function& fn = mod.functions.at(fname);
    escaping_uses.clear();
    results.clear();
    collect_uses(*fn.body);
    walk(fname, *fn.body);
  }

  static bool is_region_member(const Instr& in) {
    switch (in.kind) {
      case Instr::Kind::kPrim:
      case Instr::Kind::kFill:
      case Instr::Kind::kScalarLit:
      case Instr::Kind::kScalarBin:
      case Instr::Kind::kCons:
      case Instr::Kind::kNil:
      case Instr::Kind::kTuple:
      case Instr::Kind::kProj:
      case Instr::Kind::kCtor:
        return true;
      default:
        return false;
    }
  }

  void walk(const std::string& fname, const Body& b) {
    size_t i = 0;
    while (i < b.instrs.size()) {
      if (is_region_member(b.instrs[i])) {
        size_t j = i;
        while (j < b.instrs.size() && is_region_member(b.instrs[j])) ++j;
        build_region(fname, b, i, j);
        i = j;
      } else {
        const Instr& in = b.instrs[i];
        for (const auto& arm : in.arms) walk(fname, *arm.body);
        if (in.then_body) walk(fname, *in.then_body);
        if (in.else_body) walk(fname, *in.else_body);
        if (in.map_body) walk(fname, *in.map_body);
        if (in.ghost_body) walk(fname, *in.ghost_body);
        ++i;
      }
    }
  }

  void build_region(const std::string& fname, const Body& b, size_t lo, size_t hi) {
    // Prim instrs in [lo,hi): group into connected components per taint class.
    std::vector<size_t> prims;
    std::map<std::string, size_t> def_at;  // var -> region index
    for (size_t i = lo; i < hi; ++i) {
      if (b.instrs[i].kind == Instr::Kind::kPrim) prims.push_back(i);
      def_at[b.instrs[i].dst] = i;
    }
    if (prims.empty()) return;

    auto is_static_site = [&](int site) {
      auto it = site_avail.find(site);
      return it != site_avail.end() && it->second < kDynamicDepth;
    };
    std::map<size_t, size_t> parent;  // union-find over region indices
    std::function<size_t(size_t)> find = [&](size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (size_t p : prims) parent[p] = p;
    if (coarsen) {
      for (size_t p : prims) {
        const Instr& in = b.instrs[p];
        bool p_static = is_static_site(in.prim_site);
        for (const auto& a : in.args) {
          auto it = def_at.find(a);
          if (it == def_at.end()) continue;
          const Instr& producer = b.instrs[it->second];
          if (producer.kind != Instr::Kind::kPrim) continue;
          bool q_static = is_static_site(producer.prim_site);
          if (p_static == q_static) parent[find(p)] = find(it->second);
        }
      }
    }
    std::map<size_t, std::vector<size_t>> groups;  // root -> members (ordered)
    for (size_t p : prims) groups[find(p)].push_back(p);
    // Blocks in order of first member.
    std::vector<std::vector<size_t>> ordered;
    for (auto& [root, members] : groups) {
      std::sort(members.begin(), members.end());
      ordered.push_back(members);
    }
    std::sort(ordered.begin(), ordered.end());

    for (auto& members : ordered) {
      StaticBlock blk;
      blk.id = static_cast<int>(out.blocks.size());
      blk.func = fname;
      std::set<std::string> member_dsts;
      for (size_t m : members) member_dsts.insert(b.instrs[m].dst);
      bool all_static = true;
      size_t max_input_def = 0;
      bool has_region_input = false;
      std::set<std::string> seen_inputs;
      for (size_t m : members) {
        const Instr& in = b.instrs[m];
        blk.prim_sites.push_back(in.prim_site);
        out.block_of_site[in.prim_site] = blk.id;
        if (!is_static_site(in.prim_site)) all_static = false;
        for (const auto& a : in.args) {
          if (member_dsts.count(a)) continue;
          if (!seen_inputs.count(a)) {
            seen_inputs.insert(a);
            blk.inputs.push_back(a);
          }
          auto it = def_at.find(a);
          if (it != def_at.end()) {
            max_input_def = std::max(max_input_def, it->second);
            has_region_input = true;
          }
        }
      }
      // Outputs: member results used outside the block or escaping the body.
      for (size_t m : members) {
        const Instr& in = b.instrs[m];
        int uses = escaping_uses.count(in.dst) ? escaping_uses.at(in.dst) : 0;
        int internal = 0;
        for (size_t m2 : members)
          for (const auto& a : b.instrs[m2].args)
            if (a == in.dst) ++internal;
        if (uses > internal || results.count(in.dst)) blk.outputs.push_back(in.dst);
      }
      // Emission trigger: first member past every region-local input def.
      blk.trigger_site = b.instrs[members[0]].prim_site;
      if (has_region_input) {
        for (size_t m : members) {
          if (m > max_input_def) {
            blk.trigger_site = b.instrs[m].prim_site;
            break;
          }
        }
      }
      blk.is_static = all_static;
      out.blocks.push_back(std::move(blk));
    }
  }
};

}  // namespace

BlockInfo coarsen_static_blocks(const Module& mod, const ReuseReport& report, bool coarsen) {
  (void)report;
  std::map<int, int> avail = compute_site_avail(mod);
  BlockBuilder bb{mod, avail, coarsen, {}};
  for (const auto& [name, fn] : mod.functions) bb.run(name);
  return std::move(bb.out);
}

// ---------------------------------------------------------------------------
// Horizontal fusion

void horizontal_fuse(BlockInfo& blocks, const Module& mod, const ReuseReport& report) {
  // Index prim instrs by site for arg access.
  std::map<int, const Instr*> by_site;
  std::function<void(const Body&)> scan = [&](const Body& b) {
    for (const auto& in : b.instrs) {
      if (in.kind == Instr::Kind::kPrim) by_site[in.prim_site] = &in;
      for (const auto& arm : in.arms) scan(*arm.body);
      if (in.then_body) scan(*in.then_body);
      if (in.else_body) scan(*in.else_body);
      if (in.map_body) scan(*in.map_body);
      if (in.ghost_body) scan(*in.ghost_body);
    }
  };
  for (const auto& [name, fn] : mod.functions) scan(*fn.body);

  for (auto& blk : blocks.blocks) {
    if (blk.prim_sites.size() < 2) continue;
    // Reachability between members (site -> sites it transitively feeds).
    std::map<std::string, int> dst_site;
    for (int s : blk.prim_sites) dst_site[by_site.at(s)->dst] = s;
    std::map<int, std::set<int>> feeds;
    for (int s : blk.prim_sites) {
      for (const auto& a : by_site.at(s)->args) {
        auto it = dst_site.find(a);
        if (it != dst_site.end()) feeds[it->second].insert(s);
      }
    }
    std::function<bool(int, int, std::set<int>&)> reaches = [&](int from, int to,
                                                                std::set<int>& seen) {
      if (from == to) return true;
      if (!seen.insert(from).second) return false;
      for (int nxt : feeds[from])
        if (reaches(nxt, to, seen)) return true;
      return false;
    };
    auto independent = [&](int a, int b) {
      std::set<int> s1, s2;
      return !reaches(a, b, s1) && !reaches(b, a, s2);
    };

    std::set<std::string> boundary(blk.inputs.begin(), blk.inputs.end());
    // Group dense members by their first operand.
    std::map<std::string, std::vector<int>> candidates;
    for (int s : blk.prim_sites) {
      const Instr& in = *by_site.at(s);
      if (in.op != OpCode::kDense || in.args.size() != 2) continue;
      // The weight side must be a shared-parameter boundary input.
      if (!boundary.count(in.args[1])) continue;
      auto mc = report.merged.find(s);
      if (mc == report.merged.end() || !mc->second[1].shared) continue;
      candidates[in.args[0]].push_back(s);
    }
    for (auto& [arg, sites] : candidates) {
      if (sites.size() < 2) continue;
      std::sort(sites.begin(), sites.end());
      bool ok = true;
      for (size_t i = 0; i < sites.size() && ok; ++i)
        for (size_t j = i + 1; j < sites.size() && ok; ++j)
          ok = independent(sites[i], sites[j]);
      if (!ok) continue;
      StaticBlock::FusionGroup g;
      g.sites = sites;
      g.shared_arg = arg;
      g.shared_arg_index = 0;
      blk.fusion_groups.push_back(std::move(g));
    }
  }
}

// ---------------------------------------------------------------------------
// Hoist depths

HoistInfo compute_hoist_depths(const Module& mod, const ReuseReport& report,
                               const BlockInfo& blocks) {
  (void)report;
  HoistInfo info;
  constexpr int kDynamic = kDynamicDepth;
  // Wave number per static block: 0 when fed by parameters/inputs/constants
  // only, otherwise one past the deepest producing static block. Tracked
  // per calling context like the availability analysis.
  std::map<CallContext, std::vector<int>> param_avail;
  std::map<CallContext, int> ret_avail;
  std::map<int, int> block_depth;

  CallContext entry{mod.entry, -1};
  const anf::Function& main_fn = mod.functions.at(mod.entry);
  param_avail[entry] = std::vector<int>(main_fn.params.size(), -1);

  std::map<int, const StaticBlock*> site_block;
  for (const auto& blk : blocks.blocks)
    for (int s : blk.prim_sites) site_block[s] = &blk;

  bool changed = true;
  int guard = 0;
  while (changed) {
    MBATCH_CHECK(++guard < 5000, "hoist analysis failed to converge");
    changed = false;
    auto snapshot = param_avail;
    for (const auto& [ctx, pav] : snapshot) {
      const anf::Function& fn = mod.functions.at(ctx.callee);
      std::map<std::string, int> env;
      for (size_t i = 0; i < fn.params.size() && i < pav.size(); ++i)
        env[fn.params[i]] = pav[i];
      std::function<int(const Body&)> eval = [&](const Body& b) -> int {
        for (const auto& in : b.instrs) {
          auto get = [&](const std::string& v) {
            auto it = env.find(v);
            return it == env.end() ? -1 : it->second;
          };
          switch (in.kind) {
            case Instr::Kind::kPrim: {
              const StaticBlock* blk = site_block.count(in.prim_site)
                                           ? site_block.at(in.prim_site)
                                           : nullptr;
              if (blk && blk->is_static) {
                int d = 0;
                for (const auto& a : blk->inputs) {
                  int v = get(a);
                  d = v >= kDynamic ? kDynamic : std::max(d, v + 1);
                }
                auto it = block_depth.find(blk->id);
                int prev = it == block_depth.end() ? -1 : it->second;
                if (d > prev) {
                  block_depth[blk->id] = d;
                  changed = true;
                }
                env[in.dst] = d;
              } else {
                env[in.dst] = kDynamic;
              }
              break;
            }
            case Instr::Kind::kFill:
            case Instr::Kind::kScalarLit:
            case Instr::Kind::kNil:
              env[in.dst] = -1;
              break;
            case Instr::Kind::kCall: {
              CallContext sub{in.callee, in.call_site};
              auto& slot = param_avail[sub];
              const anf::Function& callee = mod.functions.at(in.callee);
              if (slot.empty()) {
                slot = std::vector<int>(callee.params.size(), -1);
                changed = true;
              }
              for (size_t i = 0; i < in.args.size(); ++i) {
                int v = std::max(slot[i], get(in.args[i]));
                if (v != slot[i]) {
                  slot[i] = v;
                  changed = true;
                }
              }
              env[in.dst] = ret_avail.count(sub) ? ret_avail.at(sub) : -1;
              break;
            }
            case Instr::Kind::kMatch: {
              int scrut = get(in.args[0]);
              int out = -1;
              for (const auto& arm : in.arms) {
                for (const auto& bn : arm.binders) env[bn] = scrut;
                out = std::max(out, eval(*arm.body));
              }
              env[in.dst] = std::max(out, scrut);
              break;
            }
            case Instr::Kind::kIf: {
              int out = std::max(eval(*in.then_body), eval(*in.else_body));
              env[in.dst] = std::max(out, get(in.args[0]));
              break;
            }
            case Instr::Kind::kMap: {
              for (size_t i = 0; i < in.args.size(); ++i)
                env[in.lambda_params[i]] = get(in.args[i]);
              env[in.dst] = eval(*in.map_body);
              break;
            }
            case Instr::Kind::kGhost:
              env[in.dst] = eval(*in.ghost_body);
              break;
            default: {
              int t = -1;
              for (const auto& a : in.args) t = std::max(t, get(a));
              env[in.dst] = t;
              break;
            }
          }
        }
        auto it = env.find(b.result);
        return it == env.end() ? -1 : it->second;
      };
      int ret = eval(*fn.body);
      auto it = ret_avail.find(ctx);
      int prev = it == ret_avail.end() ? std::numeric_limits<int>::min() : it->second;
      if (ret > prev) {
        ret_avail[ctx] = ret;
        changed = true;
      }
    }
  }

  for (const auto& blk : blocks.blocks) {
    if (!blk.is_static) continue;
    auto it = block_depth.find(blk.id);
    int d = it == block_depth.end() ? 0 : it->second;
    if (d < kDynamic) info.static_depth[blk.id] = d;
  }
  return info;
}

namespace {

bool body_has_tensor_work(const Body& b, const std::map<std::string, bool>& fn_prims);

bool instr_has_tensor_work(const Instr& in, const std::map<std::string, bool>& fn_prims) {
  switch (in.kind) {
    case Instr::Kind::kPrim:
      return true;
    case Instr::Kind::kCall:
      return fn_prims.count(in.callee) && fn_prims.at(in.callee);
    case Instr::Kind::kMatch:
      for (const auto& arm : in.arms)
        if (body_has_tensor_work(*arm.body, fn_prims)) return true;
      return false;
    case Instr::Kind::kIf:
      return body_has_tensor_work(*in.then_body, fn_prims) ||
             body_has_tensor_work(*in.else_body, fn_prims);
    case Instr::Kind::kMap:
      return body_has_tensor_work(*in.map_body, fn_prims);
    case Instr::Kind::kGhost:
      return body_has_tensor_work(*in.ghost_body, fn_prims);
    default:
      return false;
  }
}

bool body_has_tensor_work(const Body& b, const std::map<std::string, bool>& fn_prims) {
  for (const auto& in : b.instrs)
    if (instr_has_tensor_work(in, fn_prims)) return true;
  return false;
}

std::map<std::string, bool> tensor_work_closure(const Module& mod) {
  std::map<std::string, bool> fn_prims;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [name, fn] : mod.functions) {
      if (fn_prims[name]) continue;
      if (body_has_tensor_work(*fn.body, fn_prims)) {
        fn_prims[name] = true;
        changed = true;
      }
    }
  }
  return fn_prims;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ghost insertion

namespace {

// Counts dynamic scheduling units in a straight-line body, following calls
// into non-recursive straight-line callees; nullopt when the branch contains
// control flow whose unit count is not statically known.
struct UnitCounter {
  const Module& mod;
  const BlockInfo& blocks;
  const HoistInfo& hoist;
  const CallGraphInfo& cg;
  std::set<std::string> in_flight;

  std::optional<int> count(const Body& b) {
    int units = 0;
    std::set<int> dyn_blocks;
    for (const auto& in : b.instrs) {
      switch (in.kind) {
        case Instr::Kind::kPrim: {
          int blk = blocks.block_of_site.at(in.prim_site);
          if (!hoist.is_static(blk)) dyn_blocks.insert(blk);
          break;
        }
        case Instr::Kind::kCall: {
          if (cg.scc_cyclic[cg.scc_of.at(in.callee)] || in_flight.count(in.callee))
            return std::nullopt;
          in_flight.insert(in.callee);
          auto sub = count(*mod.functions.at(in.callee).body);
          in_flight.erase(in.callee);
          if (!sub) return std::nullopt;
          units += *sub;
          break;
        }
        case Instr::Kind::kFill:
        case Instr::Kind::kScalarLit:
        case Instr::Kind::kScalarBin:
        case Instr::Kind::kCons:
        case Instr::Kind::kNil:
        case Instr::Kind::kTuple:
        case Instr::Kind::kProj:
        case Instr::Kind::kCtor:
          break;
        default:
          return std::nullopt;
      }
    }
    return units + static_cast<int>(dyn_blocks.size());
  }
};

}  // namespace

GhostResult insert_ghost_ops(const ir::TypedProgram& tp_in, const Module& mod,
                             const ReuseReport& report, const BlockInfo& blocks,
                             const HoistInfo& hoist) {
  (void)report;
  GhostResult res;
  res.program.program = clone_program(tp_in.program);
  res.program.expr_types = tp_in.expr_types;
  ir::TypedProgram& tp = res.program;

  struct Pad {
    int ast_id;
    bool pad_then;
    int count;
  };
  std::vector<Pad> pads;
  CallGraphInfo cg = call_graph(mod);
  std::map<std::string, bool> fn_prims = tensor_work_closure(mod);

  std::function<void(const Body&)> visit = [&](const Body& b) {
    for (size_t i = 0; i < b.instrs.size(); ++i) {
      const Instr& in = b.instrs[i];
      for (const auto& arm : in.arms) visit(*arm.body);
      if (in.then_body) visit(*in.then_body);
      if (in.else_body) visit(*in.else_body);
      if (in.map_body) visit(*in.map_body);
      if (in.ghost_body) visit(*in.ghost_body);
      if (in.kind != Instr::Kind::kIf) continue;
      // A later tensor op in this body must consume the conditional's result,
      // possibly through projections or other pure data movement.
      bool consumed = false;
      std::set<std::string> derived = {in.dst};
      for (size_t j = i + 1; j < b.instrs.size() && !consumed; ++j) {
        const Instr& nxt = b.instrs[j];
        bool uses = false;
        for (const auto& a : nxt.args) uses = uses || derived.count(a) > 0;
        if (!uses) continue;
        if (nxt.kind == Instr::Kind::kPrim ||
            (nxt.kind == Instr::Kind::kCall && fn_prims.count(nxt.callee) &&
             fn_prims.at(nxt.callee))) {
          consumed = true;
        } else if (nxt.kind == Instr::Kind::kProj || nxt.kind == Instr::Kind::kTuple ||
                   nxt.kind == Instr::Kind::kCons || nxt.kind == Instr::Kind::kCtor) {
          derived.insert(nxt.dst);
        }
      }
      if (!consumed) continue;
      UnitCounter counter{mod, blocks, hoist, cg, {}};
      auto ct = counter.count(*in.then_body);
      auto ce = counter.count(*in.else_body);
      if (!ct || !ce) {
        res.plan.flagged_if_sites.push_back(in.ast_id);
        continue;
      }
      if (*ct == *ce) continue;
      pads.push_back(Pad{in.ast_id, *ct < *ce, std::abs(*ct - *ce)});
    }
  };
  for (const auto& [name, fn] : mod.functions) visit(*fn.body);

  for (const auto& pad : pads) {
    // Locate the AST conditional and wrap the shorter arm.
    for (auto& [fname, fd] : tp.program.functions) {
      walk_exprs(fd.body, [&](ir::Expr& e) {
        if (e.kind != ir::Expr::Kind::kIf || e.id != pad.ast_id) return;
        ir::ExprPtr& arm = pad.pad_then ? e.then_e : e.else_e;
        auto g = std::make_shared<ir::Expr>();
        g->kind = ir::Expr::Kind::kGhost;
        g->id = tp.program.next_expr_id++;
        g->ghost_count = pad.count;
        g->ghost_body = arm;
        tp.expr_types.resize(tp.program.next_expr_id);
        tp.expr_types[g->id] = tp.expr_types[arm->id];
        arm = g;
        GhostPlan::Entry entry;
        entry.if_expr_id = pad.ast_id;
        entry.pad_then = pad.pad_then;
        entry.count = pad.count;
        res.plan.entries.push_back(entry);
      });
    }
  }
  res.module = anf::build_module(tp);
  return res;
}

// ---------------------------------------------------------------------------
// Phases

PhaseMap assign_phases(const Module& mod, bool phases_enabled) {
  PhaseMap pm;
  int stages = std::max(1, mod.main_num_stages);
  pm.stage_phase.assign(stages, 0);
  pm.num_phases = 1;

  if (phases_enabled && !mod.main_explicit_phases.empty()) {
    int cur = 0;
    for (int s = 0; s < stages; ++s) {
      auto it = mod.main_explicit_phases.find(s);
      if (it != mod.main_explicit_phases.end()) cur = it->second;
      pm.stage_phase[s] = cur;
    }
    std::set<int> distinct(pm.stage_phase.begin(), pm.stage_phase.end());
    int expect = 0;
    for (int p : distinct)
      if (p != expect++) throw Error("non-contiguous phase numbering");
    pm.num_phases = static_cast<int>(distinct.size());
  } else if (phases_enabled) {
    // Heuristic: each prim-bearing top-level stage of @main is a phase;
    // stages without tensor work fold into the following one.
    std::map<std::string, bool> fn_prims = tensor_work_closure(mod);
    const anf::Function& main_fn = mod.functions.at(mod.entry);
    std::vector<bool> worthy(stages, false);
    for (size_t i = 0; i < main_fn.body->instrs.size(); ++i) {
      int stage = i < mod.main_stage_of_instr.size() ? mod.main_stage_of_instr[i] : 0;
      if (instr_has_tensor_work(main_fn.body->instrs[i], fn_prims)) worthy[stage] = true;
    }
    int next_phase = 0;
    std::vector<int> assigned(stages, -1);
    for (int s = 0; s < stages; ++s)
      if (worthy[s]) assigned[s] = next_phase++;
    pm.num_phases = std::max(1, next_phase);
    int following = pm.num_phases - 1;
    for (int s = stages - 1; s >= 0; --s) {
      if (assigned[s] >= 0)
        following = assigned[s];
      else
        assigned[s] = following;
    }
    pm.stage_phase = assigned;
  }

  // Context phases for reporting: propagate the calling stage's phase.
  const anf::Function& main_fn = mod.functions.at(mod.entry);
  std::map<CallContext, int> ctx_phase;
  std::function<void(const std::string&, const Body&, int)> prop =
      [&](const std::string& fname, const Body& b, int phase) {
        for (size_t i = 0; i < b.instrs.size(); ++i) {
          const Instr& in = b.instrs[i];
          int p = phase;
          if (fname == mod.entry && &b == main_fn.body.get() &&
              i < mod.main_stage_of_instr.size())
            p = pm.stage_phase[mod.main_stage_of_instr[i]];
          if (in.kind == Instr::Kind::kCall) {
            CallContext c{in.callee, in.call_site};
            if (!ctx_phase.count(c)) {
              ctx_phase[c] = p;
              prop(in.callee, *mod.functions.at(in.callee).body, p);
            }
          }
          for (const auto& arm : in.arms) prop(fname, *arm.body, p);
          if (in.then_body) prop(fname, *in.then_body, p);
          if (in.else_body) prop(fname, *in.else_body, p);
          if (in.map_body) prop(fname, *in.map_body, p);
          if (in.ghost_body) prop(fname, *in.ghost_body, p);
        }
      };
  prop(mod.entry, *main_fn.body, 0);
  pm.context_phase = ctx_phase;
  return pm;
}

// ---------------------------------------------------------------------------
// Static nesting estimate

std::map<std::string, int> static_nesting_estimate(const Module& mod) {
  CallGraphInfo cg = call_graph(mod);
  std::map<std::string, int> level;
  level[mod.entry] = 0;
  std::vector<std::string> queue = {mod.entry};
  while (!queue.empty()) {
    std::string f = queue.back();
    queue.pop_back();
    int base = level[f];
    std::function<void(const Body&, int)> walk = [&](const Body& b, int extra) {
      for (const auto& in : b.instrs) {
        if (in.kind == Instr::Kind::kCall) {
          if (cg.scc_of.at(in.callee) == cg.scc_of.at(f)) continue;
          int cand = base + extra + (cg.scc_cyclic[cg.scc_of.at(in.callee)] ? 1 : 0);
          auto it = level.find(in.callee);
          if (it == level.end() || cand > it->second) {
            level[in.callee] = cand;
            queue.push_back(in.callee);
          }
        }
        for (const auto& arm : in.arms) walk(*arm.body, extra);
        if (in.then_body) walk(*in.then_body, extra);
        if (in.else_body) walk(*in.else_body, extra);
        if (in.map_body) walk(*in.map_body, extra + 1);
        if (in.ghost_body) walk(*in.ghost_body, extra);
      }
    };
    walk(*mod.functions.at(f).body, 0);
  }
  return level;
}

}  // namespace analysis
}  // namespace mbatch
