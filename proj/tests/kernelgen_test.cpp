#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mbatch/kernelgen.hpp"
#include "mbatch/zoo.hpp"

using namespace mbatch;
using namespace mbatch::kernelgen;

namespace {

struct Built {
  ir::TypedProgram typed;
  anf::Module mod;
  analysis::ReuseReport report;
  analysis::BlockInfo blocks;
  KernelLibrary lib;
};

Built build(const std::string& src, bool hfuse = true) {
  analysis::DuplicationResult dup =
      analysis::duplicate_for_reuse(ir::infer_types(ir::parse_program(src)));
  Built b;
  b.typed = std::move(dup.program);
  b.mod = std::move(dup.module);
  b.report = std::move(dup.report);
  b.blocks = analysis::coarsen_static_blocks(b.mod, b.report, true);
  if (hfuse) analysis::horizontal_fuse(b.blocks, b.mod, b.report);
  b.lib = generate_kernel_signatures(b.mod, b.blocks, b.report);
  return b;
}

}  // namespace

TEST_CASE("rnn recurrent block gets the expected signature split") {
  Built b = build(zoo::get_model("rnn", "small").source);
  int bias_dense = -1, sigmoid_add_dense = -1;
  for (const auto& s : b.lib.signatures) {
    if (s.name == "bias_dense") bias_dense = s.id;
    if (s.name == "sigmoid_add_dense") sigmoid_add_dense = s.id;
  }
  REQUIRE(bias_dense >= 0);
  REQUIRE(sigmoid_add_dense >= 0);
  const KernelSignature& sig = b.lib.signatures[sigmoid_add_dense];
  // Shared: the recurrent weight. Batched: the input transform and state.
  CHECK(sig.shared_params.size() == 1);
  CHECK(sig.shared_params[0].first == "h_wt");
  CHECK(sig.batched_params.size() == 2);
  const KernelSignature& bd = b.lib.signatures[bias_dense];
  CHECK(bd.shared_params.size() == 2);
  CHECK(bd.batched_params.size() == 1);
}

TEST_CASE("alpha-equivalent blocks share a signature id") {
  // The duplicated birnn copies have textually distinct but structurally
  // identical blocks; structural hashing must coalesce them.
  Built b = build(zoo::birnn_source(32));
  std::map<std::string, std::set<int>> sig_of_name;
  for (const auto& [blk_id, binding] : b.lib.binding_of_block) {
    const auto& blk = b.blocks.blocks[blk_id];
    if (blk.func.rfind("rnn", 0) == 0)
      sig_of_name[b.lib.signatures[binding.sig_id].name].insert(binding.sig_id);
  }
  CHECK(sig_of_name.at("bias_dense").size() == 1);
  CHECK(sig_of_name.at("sigmoid_add_dense").size() == 1);
  // Both copies bind onto those two signatures.
  int rnn_blocks = 0;
  for (const auto& blk : b.blocks.blocks)
    if (blk.func.rfind("rnn", 0) == 0) ++rnn_blocks;
  CHECK(rnn_blocks == 4);
}

TEST_CASE("ghost signature has an empty op dag") {
  Built b = build(zoo::get_model("rnn", "small").source);
  REQUIRE(b.lib.ghost_sig >= 0);
  const KernelSignature& g = b.lib.signatures[b.lib.ghost_sig];
  CHECK(g.ghost);
  CHECK(g.op_dag.empty());
  CHECK(b.lib.plan(g.id).steps.empty());
}

TEST_CASE("signature generation is deterministic") {
  Built a = build(zoo::get_model("treelstm", "small").source);
  Built b = build(zoo::get_model("treelstm", "small").source);
  REQUIRE(a.lib.signatures.size() == b.lib.signatures.size());
  for (size_t i = 0; i < a.lib.signatures.size(); ++i) {
    CHECK(a.lib.signatures[i].name == b.lib.signatures[i].name);
    CHECK(a.lib.signatures[i].structural_key == b.lib.signatures[i].structural_key);
  }
}

TEST_CASE("elementwise tails fuse into a two-step plan") {
  Built b = build("def @main(input p: Tensor[(1, 8)], c_wt: Tensor[(8, 4)], cbias: Tensor[(1, 4)]) { relu(cbias + nn.dense(p, c_wt)) }");
  REQUIRE(b.lib.signatures.size() == 2);  // the block + ghost
  const backend::ExecutablePlan& plan = b.lib.plan(0);
  REQUIRE(plan.steps.size() == 2);
  CHECK(plan.steps[0].kind == backend::PlanStep::Kind::kOp);
  CHECK(plan.steps[0].op == backend::OpCode::kDense);
  CHECK(plan.steps[1].kind == backend::PlanStep::Kind::kChain);
  CHECK(plan.steps[1].chain.size() == 2);
}

TEST_CASE("single-op block lowers to a plan of length one") {
  Built b = build("def @main(input x: Tensor[(1, 4)], w: Tensor[(4, 4)]) { nn.dense(x, w) }");
  CHECK(b.lib.plan(0).steps.size() == 1);
}

TEST_CASE("fused four-gate dense equals four separate denses, bitwise") {
  const char* fused_src = R"(
def @main(input x: Tensor[(1, 4)], w1: Tensor[(4, 4)], w2: Tensor[(4, 4)],
          w3: Tensor[(4, 4)], w4: Tensor[(4, 4)]) {
  let a = sigmoid(nn.dense(x, w1));
  let b = sigmoid(nn.dense(x, w2));
  let c = sigmoid(nn.dense(x, w3));
  let d = sigmoid(nn.dense(x, w4));
  (a + b) + (c + d)
}
)";
  Built fused = build(fused_src, /*hfuse=*/true);
  Built plain = build(fused_src, /*hfuse=*/false);
  // The fused library contains a FusedDense step with a 4-wide output.
  bool saw_fused = false;
  for (const auto& sig : fused.lib.signatures)
    for (const auto& step : sig.op_dag)
      if (step.kind == backend::PlanStep::Kind::kFusedDense) {
        saw_fused = true;
        CHECK(step.ins.size() == 5);
        CHECK(step.out_shape == backend::Shape{1, 16});
      }
  CHECK(saw_fused);

  // Execute both libraries' single block over a batch and compare outputs.
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  backend::Arena arena;
  auto mk = [&](backend::Shape s) {
    backend::TensorHandle h = arena.alloc(s);
    float* p = arena.ptr(h);
    for (int i = 0; i < s.size(); ++i) p[i] = dist(rng);
    return h;
  };
  std::vector<backend::TensorHandle> weights = {mk({4, 4}), mk({4, 4}), mk({4, 4}), mk({4, 4})};
  std::vector<backend::TensorHandle> xs = {mk({1, 4}), mk({1, 4}), mk({1, 4})};

  auto run = [&](const Built& lib_owner) {
    const auto& binding = lib_owner.lib.binding_of_block.at(0);
    const KernelSignature& sig = lib_owner.lib.signatures[binding.sig_id];
    const auto& blk = lib_owner.blocks.blocks[0];
    std::vector<backend::BatchedCall> calls;
    for (const auto& x : xs) {
      backend::BatchedCall call;
      // Map block inputs to tensors by name.
      std::map<std::string, backend::TensorHandle> by_name = {
          {"x", x}, {"w1", weights[0]}, {"w2", weights[1]}, {"w3", weights[2]},
          {"w4", weights[3]}};
      for (const auto& [name, shape] : sig.shared_params) call.shared.push_back(by_name.at(name));
      for (const auto& [name, shape] : sig.batched_params)
        call.batched.push_back(by_name.at(name));
      calls.push_back(call);
    }
    (void)blk;
    return backend::exec_batched(arena, lib_owner.lib.plan(binding.sig_id), calls,
                                 backend::GatherMode::kFused);
  };
  auto rf = run(fused);
  auto rp = run(plain);
  REQUIRE(rf.outputs.size() == rp.outputs.size());
  for (size_t i = 0; i < rf.outputs.size(); ++i) {
    REQUIRE(rf.outputs[i].size() == rp.outputs[i].size());
    for (size_t k = 0; k < rf.outputs[i].size(); ++k) {
      const float* a = arena.ptr(rf.outputs[i][k]);
      const float* b = arena.ptr(rp.outputs[i][k]);
      for (int q = 0; q < rf.outputs[i][k].shape.size(); ++q) CHECK(a[q] == b[q]);
    }
  }
}

TEST_CASE("unsupported constructs never reach kernel generation") {
  // Everything parseable lowers; this guards the arity table.
  for (const auto& name : zoo::model_names()) {
    Built b = build(zoo::get_model(name, "small").source);
    for (const auto& sig : b.lib.signatures)
      for (const auto& step : sig.op_dag) CHECK(backend::op_arity(step.op) >= 0);
  }
}
