#include <cmath>

#include "mbatch/backend.hpp"

namespace mbatch {
namespace backend {

namespace {

inline Float chain_apply(OpCode op, Float v, Float rhs) {
  switch (op) {
    case OpCode::kAdd: return v + rhs;
    case OpCode::kMul: return v * rhs;
    case OpCode::kSigmoid: return 1.0f / (1.0f + std::exp(-v));
    case OpCode::kTanh: return std::tanh(v);
    case OpCode::kRelu: return v > 0.0f ? v : 0.0f;
    default: throw Error("op not fusable in an elementwise chain");
  }
}

}  // namespace

BatchedResult exec_batched(Arena& arena, const ExecutablePlan& plan,
                           const std::vector<BatchedCall>& instances, GatherMode mode) {
  MBATCH_CHECK(!instances.empty(), "exec_batched: empty batch");
  BatchedResult res;
  if (plan.ghost) {
    res.outputs.resize(instances.size());
    return res;
  }
  size_t b = instances.size();
  const BatchedCall& first = instances[0];
  MBATCH_CHECK(first.shared.size() == plan.shared_shapes.size() &&
                   first.batched.size() == plan.batched_shapes.size(),
               "exec_batched: arity mismatch");
  for (size_t i = 1; i < b; ++i) {
    for (size_t s = 0; s < first.shared.size(); ++s)
      MBATCH_CHECK(instances[i].shared[s] == first.shared[s],
                   "shared-param handle mismatch across instances (analysis bug)");
  }

  // Batched inputs: per slot, decide whether a gather copy is needed.
  size_t num_batched = plan.batched_shapes.size();
  std::vector<bool> gathered(num_batched, false);
  std::vector<TensorHandle> scratch(num_batched);
  if (mode == GatherMode::kExplicit) {
    for (size_t j = 0; j < num_batched; ++j) {
      int64_t size = plan.batched_shapes[j].size();
      bool contiguous = true;
      for (size_t i = 0; i + 1 < b; ++i)
        contiguous = contiguous &&
                     instances[i + 1].batched[j].offset == instances[i].batched[j].offset + size;
      if (contiguous) continue;
      TensorHandle region = arena.alloc(
          Shape{static_cast<int>(b) * plan.batched_shapes[j].rows, plan.batched_shapes[j].cols});
      for (size_t i = 0; i < b; ++i) {
        const Float* src = arena.ptr(instances[i].batched[j]);
        Float* dst = arena.ptr(region) + static_cast<int64_t>(i) * size;
        for (int64_t k = 0; k < size; ++k) dst[k] = src[k];
      }
      res.gather_bytes += static_cast<int64_t>(b) * size * static_cast<int64_t>(sizeof(Float));
      scratch[j] = region;
      gathered[j] = true;
    }
  }

  // Batch-contiguous output regions per slot.
  std::vector<TensorHandle> out_regions;
  std::vector<Shape> out_shapes;
  for (const auto& ref : plan.outputs) {
    const PlanStep& step = plan.steps.at(ref.index);
    Shape s = step.out_shape;
    if (ref.cols >= 0) s = Shape{s.rows, ref.cols};
    out_shapes.push_back(s);
    out_regions.push_back(arena.alloc(Shape{static_cast<int>(b) * s.rows, s.cols}));
  }

  res.outputs.resize(b);
  std::vector<TensorHandle> temps(plan.steps.size());
  for (size_t i = 0; i < b; ++i) {
    auto resolve = [&](const PlanRef& r) -> TensorHandle {
      TensorHandle h;
      switch (r.kind) {
        case PlanRef::Kind::kShared: h = first.shared[r.index]; break;
        case PlanRef::Kind::kBatched:
          if (gathered[r.index]) {
            int64_t size = plan.batched_shapes[r.index].size();
            h = TensorHandle{scratch[r.index].offset + static_cast<int64_t>(i) * size,
                             plan.batched_shapes[r.index]};
          } else {
            h = instances[i].batched[r.index];
          }
          break;
        case PlanRef::Kind::kTemp: h = temps[r.index]; break;
      }
      if (r.cols >= 0) {
        MBATCH_CHECK(h.shape.rows == 1, "column slices require row vectors");
        h = TensorHandle{h.offset + r.col_off, Shape{1, r.cols}};
      }
      return h;
    };

    for (size_t s = 0; s < plan.steps.size(); ++s) {
      const PlanStep& step = plan.steps[s];
      temps[s] = arena.alloc(step.out_shape);
      switch (step.kind) {
        case PlanStep::Kind::kOp: {
          std::vector<TensorHandle> ins;
          ins.reserve(step.ins.size());
          for (const auto& r : step.ins) ins.push_back(resolve(r));
          exec_primop(arena, step.op, ins, temps[s]);
          break;
        }
        case PlanStep::Kind::kFusedDense: {
          // One wide op: each weight fills its own column range, identical
          // per-weight loops to the unfused version.
          TensorHandle x = resolve(step.ins[0]);
          int col = 0;
          for (size_t w = 1; w < step.ins.size(); ++w) {
            TensorHandle wt = resolve(step.ins[w]);
            TensorHandle view{temps[s].offset + col, Shape{1, wt.shape.cols}};
            exec_primop(arena, OpCode::kDense, {x, wt}, view);
            col += wt.shape.cols;
          }
          break;
        }
        case PlanStep::Kind::kChain: {
          TensorHandle base = resolve(step.ins[0]);
          std::vector<const Float*> rhs(step.chain.size(), nullptr);
          for (size_t c = 0; c < step.chain.size(); ++c)
            if (step.chain[c].rhs) rhs[c] = arena.ptr(resolve(*step.chain[c].rhs));
          const Float* src = arena.ptr(base);
          Float* dst = arena.ptr(temps[s]);
          int n = step.out_shape.size();
          for (int k = 0; k < n; ++k) {
            Float v = src[k];
            for (size_t c = 0; c < step.chain.size(); ++c)
              v = chain_apply(step.chain[c].op, v, rhs[c] ? rhs[c][k] : 0.0f);
            dst[k] = v;
          }
          break;
        }
      }
    }

    for (size_t k = 0; k < plan.outputs.size(); ++k) {
      TensorHandle src = resolve(plan.outputs[k]);
      int64_t size = out_shapes[k].size();
      TensorHandle dst{out_regions[k].offset + static_cast<int64_t>(i) * size, out_shapes[k]};
      const Float* sp = arena.ptr(src);
      Float* dp = arena.ptr(dst);
      for (int64_t q = 0; q < size; ++q) dp[q] = sp[q];
      res.outputs[i].push_back(dst);
    }
  }
  return res;
}

}  // namespace backend
}  // namespace mbatch
