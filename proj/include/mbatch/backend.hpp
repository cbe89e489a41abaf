// Dense CPU tensor kernels over an arena-based memory model.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbatch {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define MBATCH_CHECK(cond, msg)                                    \
  do {                                                             \
    if (!(cond)) throw ::mbatch::Error(std::string("check failed: ") + (msg)); \
  } while (0)

namespace backend {

// Tensor element ops are 32-bit float throughout.
using Float = float;

enum class OpCode {
  kDense,    // (m,k) x (k,n) -> (m,n), i-k-j loop order
  kAdd,      // elementwise
  kMul,      // elementwise
  kSigmoid,
  kTanh,
  kRelu,
  kConcat,   // axis 1
  kArgmax,   // (1,n) -> (1,1), index stored as float
  kFill,     // constant fill
};

const char* op_name(OpCode op);
bool is_elementwise(OpCode op);
int op_arity(OpCode op);

struct Shape {
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// A tensor is a view into the session arena. Offsets are element
// indices, row-major, contiguous.
struct TensorHandle {
  int64_t offset = -1;
  Shape shape;
  int64_t size() const { return shape.size(); }
  bool valid() const { return offset >= 0; }
  bool operator==(const TensorHandle&) const = default;
};

// Bump allocator over a flat float buffer. No frees during a session;
// growth preserves offsets.
class Arena {
 public:
  explicit Arena(int64_t initial_capacity = 1 << 20) { data_.reserve(initial_capacity); }

  TensorHandle alloc(Shape shape) {
    TensorHandle h{static_cast<int64_t>(data_.size()), shape};
    data_.resize(data_.size() + shape.size(), 0.0f);
    return h;
  }

  Float* ptr(const TensorHandle& h) {
    MBATCH_CHECK(h.valid() && h.offset + h.size() <= static_cast<int64_t>(data_.size()),
                 "tensor handle out of arena bounds");
    return data_.data() + h.offset;
  }
  const Float* ptr(const TensorHandle& h) const {
    MBATCH_CHECK(h.valid() && h.offset + h.size() <= static_cast<int64_t>(data_.size()),
                 "tensor handle out of arena bounds");
    return data_.data() + h.offset;
  }

  int64_t used() const { return static_cast<int64_t>(data_.size()); }

 private:
  std::vector<Float> data_;
};

// Executes one primitive op. Accumulation order is fixed so results are
// bitwise reproducible across execution strategies.
void exec_primop(Arena& arena, OpCode op, const std::vector<TensorHandle>& inputs,
                 const TensorHandle& out, Float fill_value = 0.0f);

// Shape rule shared with the type checker.
Shape infer_shape(OpCode op, const std::vector<Shape>& inputs);

// ---------------------------------------------------------------------------
// Interpretable kernel plans

enum class GatherMode { kFused, kExplicit };

struct PlanRef {
  enum class Kind { kShared, kBatched, kTemp };
  Kind kind = Kind::kTemp;
  int index = 0;
  // Column slice of a temp; cols < 0 means the whole tensor.
  int col_off = 0, cols = -1;
};

struct ChainLink {
  OpCode op;                     // elementwise
  std::optional<PlanRef> rhs;    // second operand for add/mul
};

struct PlanStep {
  enum class Kind { kOp, kFusedDense, kChain };
  Kind kind = Kind::kOp;
  OpCode op = OpCode::kAdd;
  std::vector<PlanRef> ins;      // kFusedDense: [x, w1..wk]; kChain: [base]
  std::vector<ChainLink> chain;  // kChain
  Shape out_shape;
};

// Per batch instance the plan runs the same steps in the same order, which
// pins per-instance evaluation order to the unbatched reference.
struct ExecutablePlan {
  std::vector<Shape> shared_shapes, batched_shapes;
  std::vector<PlanStep> steps;
  std::vector<PlanRef> outputs;
  bool ghost = false;
};

struct BatchedCall {
  std::vector<TensorHandle> shared;
  std::vector<TensorHandle> batched;
};

struct BatchedResult {
  // outputs[i][k]: instance i, output slot k. Slots are batch-contiguous.
  std::vector<std::vector<TensorHandle>> outputs;
  int64_t gather_bytes = 0;
};

// Runs a plan over a batch. Shared handles must be identical across
// instances. kExplicit copies non-contiguous batched inputs into a scratch
// region first and reports the bytes moved; kFused indexes the scattered
// tensors directly and always reports zero.
BatchedResult exec_batched(Arena& arena, const ExecutablePlan& plan,
                           const std::vector<BatchedCall>& instances, GatherMode mode);

}  // namespace backend
}  // namespace mbatch
