// Lazy per-instance execution: fibers build per-instance dataflow graphs
// with inline depth computation; flushes schedule and run batched kernels.
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mbatch/analysis.hpp"
#include "mbatch/kernelgen.hpp"

namespace mbatch {
namespace runtime {

using backend::GatherMode;
using backend::Shape;
using backend::TensorHandle;

// ---------------------------------------------------------------------------
// Host-side values (model parameters, instance inputs, flattened outputs)

struct HostValue {
  enum class Kind { kTensor, kInt, kFloat, kList, kTuple, kAdt };
  Kind kind = Kind::kTensor;
  Shape shape;
  std::vector<float> data;        // kTensor
  long ival = 0;                  // kInt
  double fval = 0.0;              // kFloat
  std::vector<HostValue> items;   // kList elements / kTuple / kAdt fields
  std::string ctor;               // kAdt

  static HostValue tensor(Shape s, std::vector<float> d);
  static HostValue scalar(long v);
  static HostValue list(std::vector<HostValue> items);
  static HostValue tuple(std::vector<HostValue> items);
  static HostValue adt(std::string ctor, std::vector<HostValue> fields);
};

bool bitwise_equal(const HostValue& a, const HostValue& b);

// ---------------------------------------------------------------------------
// Options and compiled pipeline artifacts

struct ExecOptions {
  enum class Scheduler { kDepth, kAgenda };
  Scheduler scheduler = Scheduler::kDepth;
  GatherMode gather = GatherMode::kFused;
  bool coarsen = true;
  bool ghost = true;
  bool phases = true;
  bool hoist = true;
  bool horizontal_fuse = true;
  unsigned seed = 0;
};

struct CompiledModel {
  ir::TypedProgram typed;       // post duplication and ghost insertion
  anf::Module module;
  analysis::ReuseReport report;
  analysis::BlockInfo blocks;
  analysis::HoistInfo hoist;
  analysis::GhostPlan ghost_plan;
  analysis::PhaseMap phases;
  kernelgen::KernelLibrary kernels;
  ExecOptions opts;
};

CompiledModel compile(const ir::Program& program, const ExecOptions& opts);

// ---------------------------------------------------------------------------
// DFG nodes and traces

struct TensorRef {
  int node = -1;  // < 0: materialized handle below
  int out = 0;
  TensorHandle handle;
};

struct DFGNode {
  int id = -1;
  int sig_id = -1;
  int block_id = -1;
  int instance = -1;
  int phase = 0;
  int depth = 0;
  bool ghost = false;
  bool executed = false;
  std::vector<TensorRef> shared_ins, batched_ins;
  std::vector<int> producers;  // node ids, including ghost pseudo-edges
  std::vector<TensorHandle> outputs;
};

struct BatchRecord {
  int phase = 0;
  int depth = 0;
  int sig = -1;
  int size = 0;
  bool ghost = false;
  std::vector<int> node_ids;
};

struct ScheduleTrace {
  std::vector<BatchRecord> batches;
  long kernel_launches = 0;
  long total_nodes = 0;
  long scheduler_ops = 0;
  long sync_points = 0;
  long gather_bytes = 0;
  long dfg_edges = 0;
  std::vector<int> flush_boundaries;  // batch index where each flush window starts
};

struct EvalResult {
  std::vector<HostValue> outputs;  // one per instance
  ScheduleTrace trace;
  std::vector<DFGNode> nodes;      // final node table, for oracles
};

// ---------------------------------------------------------------------------
// Schedulers (exposed for direct testing)

// Groups by (phase, depth, sig, shared handles) and orders batches
// lexicographically; O(1) scheduler work per node.
std::vector<BatchRecord> schedule_depth(const std::vector<const DFGNode*>& nodes,
                                        long& scheduler_ops);

// Ready-set baseline: repeatedly launches the signature with the most ready
// nodes (ties: lowest sig id); counts at least one op per edge.
std::vector<BatchRecord> schedule_agenda(const std::vector<const DFGNode*>& nodes,
                                         long& scheduler_ops);

// ---------------------------------------------------------------------------
// Entry points

using ParamEnv = std::map<std::string, HostValue>;
using InstanceInput = std::map<std::string, HostValue>;

EvalResult evaluate_batch(const CompiledModel& model, const ParamEnv& params,
                          const std::vector<InstanceInput>& inputs);

// Sequential unbatched oracle: eager per-op interpretation, no DFG.
std::vector<HostValue> reference_evaluate(const CompiledModel& model, const ParamEnv& params,
                                          const std::vector<InstanceInput>& inputs);

// Exact invocation counts per kernel signature over a sample run, plus the
// static nesting-depth estimate for comparison; ranked by count.
struct ProfileReport {
  std::map<int, long> counts;          // sig id -> invocations
  std::map<int, int> static_estimate;  // sig id -> loop-nesting level
  std::vector<int> ranking;            // sig ids, most-invoked first
};
ProfileReport profile_invocations(const CompiledModel& model, const ParamEnv& params,
                                  const std::vector<InstanceInput>& inputs);

}  // namespace runtime
}  // namespace mbatch
