// Turns coarsened static blocks into batched kernel signatures and
// interpretable execution plans.
#pragma once

#include "mbatch/analysis.hpp"
#include "mbatch/backend.hpp"

namespace mbatch {
namespace kernelgen {

using analysis::BlockInfo;
using analysis::ReuseReport;
using backend::ExecutablePlan;
using backend::OpCode;
using backend::PlanRef;
using backend::Shape;

struct KernelSignature {
  int id = -1;
  std::string name;
  // Canonical op DAG: plan-shaped steps before elementwise-chain fusion.
  std::vector<backend::PlanStep> op_dag;
  std::vector<PlanRef> dag_outputs;
  std::vector<std::pair<std::string, Shape>> shared_params;
  std::vector<std::pair<std::string, Shape>> batched_params;
  std::vector<Shape> outputs;
  bool ghost = false;
  std::string structural_key;  // identical key -> identical id
};

struct BlockBinding {
  int sig_id = -1;
  // Positions of shared/batched params within the block's input list.
  std::vector<int> shared_input_pos, batched_input_pos;
};

struct KernelLibrary {
  std::vector<KernelSignature> signatures;
  std::map<int, BlockBinding> binding_of_block;
  std::vector<ExecutablePlan> plans;  // indexed by sig id
  int ghost_sig = -1;

  const ExecutablePlan& plan(int sig) const { return plans.at(sig); }
};

// One signature per distinct (block structure, reuse classification) pair;
// alpha-equivalent blocks share an id. Also registers the ghost signature.
KernelLibrary generate_kernel_signatures(const anf::Module& mod, const BlockInfo& blocks,
                                         const ReuseReport& report);

// Lowers a signature's op DAG to an interpretable plan with elementwise
// chains fused into single passes.
ExecutablePlan lower_block_to_kernel(const KernelSignature& sig);

}  // namespace kernelgen
}  // namespace mbatch
