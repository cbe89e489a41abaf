#include "mbatch/runtime.hpp"

#include <algorithm>
#include <cstring>

namespace mbatch {
namespace runtime {

HostValue HostValue::tensor(Shape s, std::vector<float> d) {
  HostValue v;
  v.kind = Kind::kTensor;
  v.shape = s;
  v.data = std::move(d);
  MBATCH_CHECK(static_cast<int>(v.data.size()) == s.size(), "host tensor size mismatch");
  return v;
}
HostValue HostValue::scalar(long x) {
  HostValue v;
  v.kind = Kind::kInt;
  v.ival = x;
  return v;
}
HostValue HostValue::list(std::vector<HostValue> items) {
  HostValue v;
  v.kind = Kind::kList;
  v.items = std::move(items);
  return v;
}
HostValue HostValue::tuple(std::vector<HostValue> items) {
  HostValue v;
  v.kind = Kind::kTuple;
  v.items = std::move(items);
  return v;
}
HostValue HostValue::adt(std::string ctor, std::vector<HostValue> fields) {
  HostValue v;
  v.kind = Kind::kAdt;
  v.ctor = std::move(ctor);
  v.items = std::move(fields);
  return v;
}

bool bitwise_equal(const HostValue& a, const HostValue& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case HostValue::Kind::kTensor: {
      if (!(a.shape == b.shape) || a.data.size() != b.data.size()) return false;
      return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
    }
    case HostValue::Kind::kInt: return a.ival == b.ival;
    case HostValue::Kind::kFloat:
      return std::memcmp(&a.fval, &b.fval, sizeof(double)) == 0;
    case HostValue::Kind::kList:
    case HostValue::Kind::kTuple:
    case HostValue::Kind::kAdt: {
      if (a.ctor != b.ctor || a.items.size() != b.items.size()) return false;
      for (size_t i = 0; i < a.items.size(); ++i)
        if (!bitwise_equal(a.items[i], b.items[i])) return false;
      return true;
    }
  }
  return false;
}

CompiledModel compile(const ir::Program& program, const ExecOptions& opts) {
  CompiledModel m;
  m.opts = opts;
  ir::TypedProgram typed = ir::infer_types(program);

  analysis::DuplicationResult dup = analysis::duplicate_for_reuse(typed);
  m.typed = std::move(dup.program);
  m.module = std::move(dup.module);
  m.report = std::move(dup.report);

  m.blocks = analysis::coarsen_static_blocks(m.module, m.report, opts.coarsen);
  if (opts.horizontal_fuse) analysis::horizontal_fuse(m.blocks, m.module, m.report);
  if (opts.hoist) m.hoist = analysis::compute_hoist_depths(m.module, m.report, m.blocks);

  if (opts.ghost) {
    analysis::GhostResult g =
        analysis::insert_ghost_ops(m.typed, m.module, m.report, m.blocks, m.hoist);
    m.ghost_plan = std::move(g.plan);
    if (!m.ghost_plan.entries.empty()) {
      // Everything downstream of the rewritten AST is rebuilt.
      m.typed = std::move(g.program);
      m.module = std::move(g.module);
      m.report = analysis::taint_shared_params(m.typed, m.module);
      m.blocks = analysis::coarsen_static_blocks(m.module, m.report, opts.coarsen);
      if (opts.horizontal_fuse) analysis::horizontal_fuse(m.blocks, m.module, m.report);
      m.hoist = analysis::HoistInfo{};
      if (opts.hoist) m.hoist = analysis::compute_hoist_depths(m.module, m.report, m.blocks);
    }
  }
  m.phases = analysis::assign_phases(m.module, opts.phases);
  m.kernels = kernelgen::generate_kernel_signatures(m.module, m.blocks, m.report);
  return m;
}

ProfileReport profile_invocations(const CompiledModel& model, const ParamEnv& params,
                                  const std::vector<InstanceInput>& inputs) {
  EvalResult res = evaluate_batch(model, params, inputs);
  ProfileReport rep;
  for (const auto& n : res.nodes)
    if (!n.ghost) ++rep.counts[n.sig_id];
  std::map<std::string, int> levels = analysis::static_nesting_estimate(model.module);
  for (const auto& [blk_id, binding] : model.kernels.binding_of_block) {
    const auto& blk = model.blocks.blocks[blk_id];
    auto it = levels.find(blk.func);
    int level = it == levels.end() ? 0 : it->second;
    auto cur = rep.static_estimate.find(binding.sig_id);
    if (cur == rep.static_estimate.end() || level > cur->second)
      rep.static_estimate[binding.sig_id] = level;
  }
  for (const auto& [sig, count] : rep.counts) rep.ranking.push_back(sig);
  std::sort(rep.ranking.begin(), rep.ranking.end(), [&](int a, int b) {
    if (rep.counts.at(a) != rep.counts.at(b)) return rep.counts.at(a) > rep.counts.at(b);
    return a < b;
  });
  return rep;
}

}  // namespace runtime
}  // namespace mbatch
