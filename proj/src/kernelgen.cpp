#include "mbatch/kernelgen.hpp"

#include <functional>
#include <sstream>

namespace mbatch {
namespace kernelgen {

using analysis::StaticBlock;
using anf::Body;
using anf::Instr;
using backend::ChainLink;
using backend::PlanStep;

namespace {

// Index prim instrs of the whole module by site id.
std::map<int, const Instr*> index_prims(const anf::Module& mod) {
  std::map<int, const Instr*> out;
  std::function<void(const Body&)> scan = [&](const Body& b) {
    for (const auto& in : b.instrs) {
      if (in.kind == Instr::Kind::kPrim) out[in.prim_site] = &in;
      for (const auto& arm : in.arms) scan(*arm.body);
      if (in.then_body) scan(*in.then_body);
      if (in.else_body) scan(*in.else_body);
      if (in.map_body) scan(*in.map_body);
      if (in.ghost_body) scan(*in.ghost_body);
    }
  };
  for (const auto& [name, fn] : mod.functions) scan(*fn.body);
  return out;
}

std::string ref_key(const PlanRef& r) {
  std::ostringstream os;
  switch (r.kind) {
    case PlanRef::Kind::kShared: os << "S" << r.index; break;
    case PlanRef::Kind::kBatched: os << "B" << r.index; break;
    case PlanRef::Kind::kTemp: os << "T" << r.index; break;
  }
  if (r.cols >= 0) os << "[" << r.col_off << "," << r.cols << "]";
  return os.str();
}

struct DagBuild {
  KernelSignature sig;
  // var -> dag ref for member outputs
  std::map<std::string, PlanRef> ref_of_var;
};

DagBuild build_dag(const StaticBlock& blk, const std::map<int, const Instr*>& prims,
                   const ReuseReport& report, BlockBinding& binding) {
  DagBuild b;
  // Split boundary inputs into shared and batched, preserving order.
  std::map<std::string, PlanRef> input_ref;
  for (size_t i = 0; i < blk.inputs.size(); ++i) {
    const std::string& var = blk.inputs[i];
    // A boundary var's class comes from any member consuming it.
    bool shared = false;
    Shape shape{};
    for (int site : blk.prim_sites) {
      const Instr& in = *prims.at(site);
      for (size_t a = 0; a < in.args.size(); ++a) {
        if (in.args[a] != var) continue;
        shape = in.arg_shapes[a];
        auto it = report.merged.find(site);
        if (it != report.merged.end() && a < it->second.size()) shared = it->second[a].shared;
      }
    }
    PlanRef r;
    if (shared) {
      r.kind = PlanRef::Kind::kShared;
      r.index = static_cast<int>(b.sig.shared_params.size());
      b.sig.shared_params.push_back({var, shape});
      binding.shared_input_pos.push_back(static_cast<int>(i));
    } else {
      r.kind = PlanRef::Kind::kBatched;
      r.index = static_cast<int>(b.sig.batched_params.size());
      b.sig.batched_params.push_back({var, shape});
      binding.batched_input_pos.push_back(static_cast<int>(i));
    }
    input_ref[var] = r;
  }

  // Fusion groups: map member site -> (group, position).
  std::map<int, std::pair<int, int>> fused_at;
  for (size_t g = 0; g < blk.fusion_groups.size(); ++g)
    for (size_t k = 0; k < blk.fusion_groups[g].sites.size(); ++k)
      fused_at[blk.fusion_groups[g].sites[k]] = {static_cast<int>(g), static_cast<int>(k)};

  auto arg_ref = [&](const std::string& var) -> PlanRef {
    auto it = b.ref_of_var.find(var);
    if (it != b.ref_of_var.end()) return it->second;
    auto it2 = input_ref.find(var);
    MBATCH_CHECK(it2 != input_ref.end(), "block argument resolution");
    return it2->second;
  };

  std::set<int> groups_emitted;
  for (int site : blk.prim_sites) {
    const Instr& in = *prims.at(site);
    auto fu = fused_at.find(site);
    if (fu != fused_at.end()) {
      const auto& group = blk.fusion_groups[fu->second.first];
      if (!groups_emitted.insert(fu->second.first).second) continue;
      // Emit the whole group as one wide dense at the first member.
      PlanStep step;
      step.kind = PlanStep::Kind::kFusedDense;
      step.op = OpCode::kDense;
      step.ins.push_back(arg_ref(prims.at(group.sites[0])->args[0]));
      int total = 0;
      std::vector<int> offs;
      for (int gs : group.sites) {
        const Instr& gi = *prims.at(gs);
        step.ins.push_back(arg_ref(gi.args[1]));
        offs.push_back(total);
        total += gi.out_shape.cols;
      }
      step.out_shape = Shape{1, total};
      int step_idx = static_cast<int>(b.sig.op_dag.size());
      b.sig.op_dag.push_back(step);
      for (size_t k = 0; k < group.sites.size(); ++k) {
        const Instr& gi = *prims.at(group.sites[k]);
        PlanRef r;
        r.kind = PlanRef::Kind::kTemp;
        r.index = step_idx;
        r.col_off = offs[k];
        r.cols = gi.out_shape.cols;
        b.ref_of_var[gi.dst] = r;
      }
      continue;
    }
    PlanStep step;
    step.kind = PlanStep::Kind::kOp;
    step.op = in.op;
    for (const auto& a : in.args) step.ins.push_back(arg_ref(a));
    step.out_shape = in.out_shape;
    int step_idx = static_cast<int>(b.sig.op_dag.size());
    b.sig.op_dag.push_back(step);
    PlanRef r;
    r.kind = PlanRef::Kind::kTemp;
    r.index = step_idx;
    b.ref_of_var[in.dst] = r;
  }

  for (const auto& out : blk.outputs) {
    PlanRef r = b.ref_of_var.at(out);
    b.sig.dag_outputs.push_back(r);
    Shape s = b.sig.op_dag[r.index].out_shape;
    if (r.cols >= 0) s = Shape{s.rows, r.cols};
    b.sig.outputs.push_back(s);
  }
  return b;
}

std::string structural_key(const KernelSignature& sig) {
  std::ostringstream os;
  for (const auto& step : sig.op_dag) {
    os << (step.kind == PlanStep::Kind::kFusedDense ? "F" : "O") << backend::op_name(step.op);
    for (const auto& r : step.ins) os << "," << ref_key(r);
    os << ":" << step.out_shape.rows << "x" << step.out_shape.cols << ";";
  }
  os << "|in:";
  for (const auto& [n, s] : sig.shared_params) os << "S" << s.rows << "x" << s.cols << ";";
  for (const auto& [n, s] : sig.batched_params) os << "B" << s.rows << "x" << s.cols << ";";
  os << "|out:";
  for (const auto& r : sig.dag_outputs) os << ref_key(r) << ";";
  return os.str();
}

// Readable kernel names in the style of the generated code: the spine of
// ops from the first output back through temp inputs; an add with a shared
// operand reads as "bias".
std::string derive_name(const KernelSignature& sig) {
  if (sig.ghost) return "ghost";
  if (sig.op_dag.empty()) return "empty";
  std::vector<std::string> parts;
  std::set<int> seen;
  std::function<void(const PlanRef&)> walk = [&](const PlanRef& r) {
    if (r.kind != PlanRef::Kind::kTemp || !seen.insert(r.index).second) return;
    if (parts.size() >= 4) return;
    const PlanStep& step = sig.op_dag[r.index];
    if (step.kind == PlanStep::Kind::kFusedDense) {
      parts.push_back("dense_x" + std::to_string(step.ins.size() - 1));
      return;
    }
    std::string p = backend::op_name(step.op);
    if (step.op == OpCode::kAdd) {
      for (const auto& in : step.ins)
        if (in.kind == PlanRef::Kind::kShared) p = "bias";
    }
    parts.push_back(p);
    // Descend through the first temp operand.
    for (const auto& in : step.ins) {
      if (in.kind == PlanRef::Kind::kTemp) {
        walk(in);
        break;
      }
    }
  };
  walk(sig.dag_outputs.empty() ? PlanRef{PlanRef::Kind::kTemp,
                                         static_cast<int>(sig.op_dag.size()) - 1, 0, -1}
                               : sig.dag_outputs[0]);
  if (parts.empty()) parts.push_back(backend::op_name(sig.op_dag[0].op));
  std::string name;
  for (size_t i = 0; i < parts.size(); ++i) name += (i ? "_" : "") + parts[i];
  return name;
}

}  // namespace

ExecutablePlan lower_block_to_kernel(const KernelSignature& sig) {
  ExecutablePlan plan;
  plan.ghost = sig.ghost;
  for (const auto& [n, s] : sig.shared_params) plan.shared_shapes.push_back(s);
  for (const auto& [n, s] : sig.batched_params) plan.batched_shapes.push_back(s);
  if (sig.ghost) return plan;

  // Consumer counts per dag step (temps consumed once by the next step can
  // be folded into an elementwise chain).
  std::vector<int> consumers(sig.op_dag.size(), 0);
  for (const auto& step : sig.op_dag)
    for (const auto& r : step.ins)
      if (r.kind == PlanRef::Kind::kTemp) ++consumers[r.index];
  std::vector<bool> is_output(sig.op_dag.size(), false);
  for (const auto& r : sig.dag_outputs)
    if (r.kind == PlanRef::Kind::kTemp) is_output[r.index] = true;

  auto chainable = [&](size_t i) {
    const PlanStep& s = sig.op_dag[i];
    if (s.kind != PlanStep::Kind::kOp || !backend::is_elementwise(s.op)) return false;
    // Must consume the immediately preceding step's temp exactly once, and
    // that temp must not be needed elsewhere. Column slices stay materialized.
    for (const auto& r : s.ins) {
      if (r.kind == PlanRef::Kind::kTemp && r.index == static_cast<int>(i) - 1) {
        if (r.cols >= 0) return false;
        return consumers[i - 1] == 1 && !is_output[i - 1];
      }
    }
    return false;
  };

  std::vector<int> new_index(sig.op_dag.size(), -1);
  auto remap = [&](PlanRef r) {
    if (r.kind == PlanRef::Kind::kTemp) r.index = new_index[r.index];
    return r;
  };

  size_t i = 0;
  while (i < sig.op_dag.size()) {
    const PlanStep& base = sig.op_dag[i];
    // Extend a chain as long as each next step folds onto the current one.
    size_t j = i + 1;
    std::vector<ChainLink> links;
    while (j < sig.op_dag.size() && chainable(j)) {
      const PlanStep& s = sig.op_dag[j];
      ChainLink link;
      link.op = s.op;
      for (const auto& r : s.ins) {
        if (!(r.kind == PlanRef::Kind::kTemp && r.index == static_cast<int>(j) - 1))
          link.rhs = remap(r);
      }
      links.push_back(link);
      ++j;
    }
    PlanStep out;
    if (links.empty()) {
      out = base;
      for (auto& r : out.ins) r = remap(r);
    } else {
      // Materialize the base step, then run the fused tail over it.
      PlanStep base_copy = base;
      for (auto& r : base_copy.ins) r = remap(r);
      int base_idx = static_cast<int>(plan.steps.size());
      plan.steps.push_back(base_copy);
      for (size_t k = i; k < j; ++k) new_index[k] = base_idx;
      out.kind = PlanStep::Kind::kChain;
      out.ins = {PlanRef{PlanRef::Kind::kTemp, base_idx, 0, -1}};
      out.chain = links;
      out.out_shape = sig.op_dag[j - 1].out_shape;
    }
    int idx = static_cast<int>(plan.steps.size());
    plan.steps.push_back(out);
    for (size_t k = i; k < j; ++k)
      if (new_index[k] < 0 || k == j - 1) new_index[k] = idx;
    new_index[j - 1] = idx;
    if (links.empty()) new_index[i] = idx;
    i = j;
  }
  for (const auto& r : sig.dag_outputs) plan.outputs.push_back(remap(r));
  return plan;
}

KernelLibrary generate_kernel_signatures(const anf::Module& mod, const BlockInfo& blocks,
                                         const ReuseReport& report) {
  KernelLibrary lib;
  auto prims = index_prims(mod);
  std::map<std::string, int> by_key;
  std::set<std::string> names_used;

  for (const auto& blk : blocks.blocks) {
    for (int site : blk.prim_sites) {
      MBATCH_CHECK(prims.count(site), "unknown prim site in block");
      OpCode op = prims.at(site)->op;
      MBATCH_CHECK(backend::op_arity(op) >= 0,
                   std::string("unsupported op in block: ") + backend::op_name(op));
    }
    BlockBinding binding;
    DagBuild built = build_dag(blk, prims, report, binding);
    built.sig.structural_key = structural_key(built.sig);
    auto it = by_key.find(built.sig.structural_key);
    if (it != by_key.end()) {
      binding.sig_id = it->second;
    } else {
      built.sig.id = static_cast<int>(lib.signatures.size());
      std::string base = derive_name(built.sig);
      std::string name = base;
      int suffix = 2;
      while (names_used.count(name)) name = base + "_" + std::to_string(suffix++);
      names_used.insert(name);
      built.sig.name = name;
      by_key[built.sig.structural_key] = built.sig.id;
      binding.sig_id = built.sig.id;
      lib.signatures.push_back(std::move(built.sig));
    }
    lib.binding_of_block[blk.id] = binding;
  }

  // Scheduler-only ghost signature.
  KernelSignature ghost;
  ghost.ghost = true;
  ghost.id = static_cast<int>(lib.signatures.size());
  ghost.name = "ghost";
  ghost.structural_key = "ghost";
  lib.ghost_sig = ghost.id;
  lib.signatures.push_back(std::move(ghost));

  for (const auto& sig : lib.signatures) lib.plans.push_back(lower_block_to_kernel(sig));
  return lib;
}

}  // namespace kernelgen
}  // namespace mbatch
