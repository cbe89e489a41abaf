// Compile-time passes that produce batching hints: parameter-reuse taint
// analysis, function duplication, grain-size coarsening into static blocks,
// horizontal fusion, operator hoisting, ghost insertion and phase assignment.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mbatch/anf.hpp"

namespace mbatch {
namespace analysis {

using anf::Module;

// Taint levels form a total order. A value at kParam is derived exclusively
// from model parameters and constants; kInput additionally involves
// per-instance program inputs; kDynamic involves intermediate tensors that
// vary with recursion state.
enum class TaintLevel { kParam = 0, kInput = 1, kDynamic = 2 };

struct Taint {
  TaintLevel level = TaintLevel::kParam;
  std::set<std::string> provenance;  // contributing model parameters (kParam only)

  static Taint join(const Taint& a, const Taint& b);
  bool operator==(const Taint&) const = default;
};

// One level of calling context: (callee, caller call-site). Site -1 is the
// entry context of @main.
struct CallContext {
  std::string callee;
  int caller_site = -1;
  auto operator<=>(const CallContext&) const = default;
};

struct ArgClass {
  bool shared = false;
  Taint taint;
};

struct ReuseReport {
  // Per context, per prim site: one classification per argument.
  std::map<CallContext, std::map<int, std::vector<ArgClass>>> by_context;
  // Joined over all contexts of the owning function; used for kernel
  // generation and hoisting.
  std::map<int, std::vector<ArgClass>> merged;
  // Functions never reached from the entry.
  std::vector<std::string> skipped;
  // Cross-external-context disagreements per function (classification or
  // shared-parameter provenance differs); drives duplication.
  std::map<std::string, int> conflicts;

  int total_conflicts() const {
    int n = 0;
    for (auto& [f, c] : conflicts) n += c;
    return n;
  }
};

ReuseReport taint_shared_params(const ir::TypedProgram& tp, const Module& mod);

// Clones functions whose argument classifications conflict across calling
// contexts, one copy per external context, retargeting call sites. The
// returned program re-taints with zero conflicts.
struct DuplicationResult {
  ir::TypedProgram program;
  Module module;
  ReuseReport report;
  int clones_made = 0;
};
DuplicationResult duplicate_for_reuse(const ir::TypedProgram& tp, int clone_cap = 64);

// ---------------------------------------------------------------------------
// Static blocks

struct StaticBlock {
  int id = -1;
  std::string func;
  std::vector<int> prim_sites;    // member prim instrs, in body order
  int trigger_site = -1;          // emission point during interpretation
  std::vector<std::string> inputs;   // boundary input vars, deterministic order
  std::vector<std::string> outputs;  // member results visible outside the block
  bool is_static = false;            // every input is recursion-independent
  // Horizontal fusion groups: member sites fused into one wide op.
  struct FusionGroup {
    std::vector<int> sites;       // fused dense sites, in body order
    std::string shared_arg;       // operand common to all members
    int shared_arg_index = 0;
  };
  std::vector<FusionGroup> fusion_groups;
};

struct BlockInfo {
  std::vector<StaticBlock> blocks;
  std::map<int, int> block_of_site;  // prim site -> block id
};

// Static availability depth per prim site: the step at which the op's value
// could be computed if scheduled purely from parameters and program inputs.
// Recursion-carried values diverge and are reported as kDynamicDepth.
inline constexpr int kDynamicDepth = 1 << 20;
std::map<int, int> compute_site_avail(const Module& mod,
                                      std::map<CallContext, std::vector<int>>* param_avail_out =
                                          nullptr);

// Partitions every prim site into maximal control-free blocks. Blocks never
// span a Match/If/Call/ScalarOf/map, and recursion-independent ops are kept
// separate from recursion-dependent ones so hoisting stays applicable.
// With `coarsen` off every op forms its own block.
BlockInfo coarsen_static_blocks(const Module& mod, const ReuseReport& report,
                                bool coarsen = true);

// Fuses independent same-op members sharing an operand whose other inputs
// are shared parameters (k dense ops on one activation become one wide op).
void horizontal_fuse(BlockInfo& blocks, const Module& mod, const ReuseReport& report);

// ---------------------------------------------------------------------------
// Hoisting

struct HoistInfo {
  // Block id -> static depth; absent means dynamic.
  std::map<int, int> static_depth;
  bool is_static(int block) const { return static_depth.count(block) > 0; }
};

HoistInfo compute_hoist_depths(const Module& mod, const ReuseReport& report,
                               const BlockInfo& blocks);

// ---------------------------------------------------------------------------
// Ghost operators

struct GhostPlan {
  struct Entry {
    int if_expr_id;      // AST id of the conditional
    bool pad_then;       // which branch receives ghosts
    int count;
  };
  std::vector<Entry> entries;
  // Conditionals with a downstream consumer whose branches could not be
  // statically counted (control flow inside an arm).
  std::vector<int> flagged_if_sites;
};

// Balances branch unit counts of each If whose result feeds a later tensor
// op, padding the shorter branch with ghost units. Returns the rewritten
// program (ghost exprs inserted) together with the plan.
struct GhostResult {
  ir::TypedProgram program;
  Module module;
  GhostPlan plan;
};
// `hoist` should reflect the depths the executor will actually use (empty
// when hoisting is disabled) so branch unit counts match runtime behavior.
GhostResult insert_ghost_ops(const ir::TypedProgram& tp, const Module& mod,
                             const ReuseReport& report, const BlockInfo& blocks,
                             const HoistInfo& hoist);

// ---------------------------------------------------------------------------
// Phases

struct PhaseMap {
  // Phase of each top-level stage of @main (stage index -> phase).
  std::vector<int> stage_phase;
  int num_phases = 1;
  // Per calling context, the phase its blocks run under (reporting only;
  // the executor tracks phases dynamically).
  std::map<CallContext, int> context_phase;
};

PhaseMap assign_phases(const Module& mod, bool phases_enabled = true);

// ---------------------------------------------------------------------------
// Invocation profiling (exact counts come from the runtime; this computes
// the static nesting-depth estimate compared against them).

// Loop-nesting estimate per function: number of enclosing recursive SCCs
// on the call path from the entry, plus map nesting.
std::map<std::string, int> static_nesting_estimate(const Module& mod);

// Strongly connected components of the call graph; maps each function to a
// component id and tells whether the component contains a cycle.
struct CallGraphInfo {
  std::map<std::string, int> scc_of;
  std::vector<bool> scc_cyclic;
  std::map<std::string, std::set<std::string>> callees;
};
CallGraphInfo call_graph(const Module& mod);

}  // namespace analysis
}  // namespace mbatch
