#include "mbatch/backend.hpp"

#include <cmath>
#include <sstream>

namespace mbatch {
namespace backend {

const char* op_name(OpCode op) {
  switch (op) {
    case OpCode::kDense: return "dense";
    case OpCode::kAdd: return "add";
    case OpCode::kMul: return "mul";
    case OpCode::kSigmoid: return "sigmoid";
    case OpCode::kTanh: return "tanh";
    case OpCode::kRelu: return "relu";
    case OpCode::kConcat: return "concat";
    case OpCode::kArgmax: return "argmax";
    case OpCode::kFill: return "fill";
  }
  return "?";
}

bool is_elementwise(OpCode op) {
  switch (op) {
    case OpCode::kAdd:
    case OpCode::kMul:
    case OpCode::kSigmoid:
    case OpCode::kTanh:
    case OpCode::kRelu:
      return true;
    default:
      return false;
  }
}

int op_arity(OpCode op) {
  switch (op) {
    case OpCode::kDense:
    case OpCode::kAdd:
    case OpCode::kMul:
    case OpCode::kConcat:
      return 2;
    case OpCode::kSigmoid:
    case OpCode::kTanh:
    case OpCode::kRelu:
    case OpCode::kArgmax:
      return 1;
    case OpCode::kFill:
      return 0;
  }
  return -1;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << rows << ", " << cols << ")";
  return os.str();
}

Shape infer_shape(OpCode op, const std::vector<Shape>& in) {
  auto arity_ok = static_cast<int>(in.size()) == op_arity(op);
  MBATCH_CHECK(arity_ok, std::string(op_name(op)) + ": bad arity");
  switch (op) {
    case OpCode::kDense:
      MBATCH_CHECK(in[0].cols == in[1].rows,
                   std::string("dense: shape mismatch, expected (m,k)x(k,n), got ") +
                       in[0].str() + " x " + in[1].str());
      return Shape{in[0].rows, in[1].cols};
    case OpCode::kAdd:
    case OpCode::kMul:
      MBATCH_CHECK(in[0] == in[1], std::string(op_name(op)) + ": shape mismatch, expected " +
                                       in[0].str() + ", actual " + in[1].str());
      return in[0];
    case OpCode::kSigmoid:
    case OpCode::kTanh:
    case OpCode::kRelu:
      return in[0];
    case OpCode::kConcat:
      MBATCH_CHECK(in[0].rows == in[1].rows,
                   std::string("concat: row mismatch, ") + in[0].str() + " vs " + in[1].str());
      return Shape{in[0].rows, in[0].cols + in[1].cols};
    case OpCode::kArgmax:
      MBATCH_CHECK(in[0].rows == 1, "argmax: expected a (1,n) tensor, got " + in[0].str());
      return Shape{1, 1};
    case OpCode::kFill:
      return Shape{};
  }
  throw Error("unknown op");
}

namespace {

inline Float apply_unary(OpCode op, Float x) {
  switch (op) {
    case OpCode::kSigmoid: return 1.0f / (1.0f + std::exp(-x));
    case OpCode::kTanh: return std::tanh(x);
    case OpCode::kRelu: return x > 0.0f ? x : 0.0f;
    default: throw Error("not a unary op");
  }
}

}  // namespace

void exec_primop(Arena& arena, OpCode op, const std::vector<TensorHandle>& inputs,
                 const TensorHandle& out, Float fill_value) {
  std::vector<Shape> shapes;
  shapes.reserve(inputs.size());
  for (const auto& h : inputs) shapes.push_back(h.shape);
  if (op != OpCode::kFill) {
    Shape expect = infer_shape(op, shapes);
    MBATCH_CHECK(expect == out.shape, std::string(op_name(op)) + ": output shape mismatch");
  }

  switch (op) {
    case OpCode::kDense: {
      // Fixed i-k-j order, 32-bit accumulation.
      const Float* a = arena.ptr(inputs[0]);
      const Float* b = arena.ptr(inputs[1]);
      Float* c = arena.ptr(out);
      int m = inputs[0].shape.rows, k = inputs[0].shape.cols, n = inputs[1].shape.cols;
      for (int i = 0; i < m * n; ++i) c[i] = 0.0f;
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          Float av = a[i * k + p];
          const Float* brow = b + p * n;
          Float* crow = c + i * n;
          for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      break;
    }
    case OpCode::kAdd:
    case OpCode::kMul: {
      const Float* a = arena.ptr(inputs[0]);
      const Float* b = arena.ptr(inputs[1]);
      Float* c = arena.ptr(out);
      int n = out.shape.size();
      if (op == OpCode::kAdd)
        for (int i = 0; i < n; ++i) c[i] = a[i] + b[i];
      else
        for (int i = 0; i < n; ++i) c[i] = a[i] * b[i];
      break;
    }
    case OpCode::kSigmoid:
    case OpCode::kTanh:
    case OpCode::kRelu: {
      const Float* a = arena.ptr(inputs[0]);
      Float* c = arena.ptr(out);
      int n = out.shape.size();
      for (int i = 0; i < n; ++i) c[i] = apply_unary(op, a[i]);
      break;
    }
    case OpCode::kConcat: {
      const Float* a = arena.ptr(inputs[0]);
      const Float* b = arena.ptr(inputs[1]);
      Float* c = arena.ptr(out);
      int rows = out.shape.rows, ca = inputs[0].shape.cols, cb = inputs[1].shape.cols;
      for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < ca; ++j) c[r * (ca + cb) + j] = a[r * ca + j];
        for (int j = 0; j < cb; ++j) c[r * (ca + cb) + ca + j] = b[r * cb + j];
      }
      break;
    }
    case OpCode::kArgmax: {
      const Float* a = arena.ptr(inputs[0]);
      Float* c = arena.ptr(out);
      int n = inputs[0].shape.cols;
      int best = 0;
      for (int i = 1; i < n; ++i)
        if (a[i] > a[best]) best = i;
      c[0] = static_cast<Float>(best);
      break;
    }
    case OpCode::kFill: {
      Float* c = arena.ptr(out);
      int n = out.shape.size();
      for (int i = 0; i < n; ++i) c[i] = fill_value;
      break;
    }
  }
}

}  // namespace backend
}  // namespace mbatch
