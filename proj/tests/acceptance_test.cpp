// Acceptance suite: structural and counter-level reproductions of the
// batching properties, one pass/fail line per criterion.
#include <chrono>
#include <sstream>
#include <functional>
#include <iostream>
#include <random>

#include "test_util.hpp"

using namespace mbatch;
using namespace mbatch::runtime;
using namespace mbatch::testutil;

namespace {

int failures = 0;

void report(int criterion, bool ok, const std::string& what) {
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << what
            << std::endl;
  if (!ok) ++failures;
}

HostValue random_vec(std::mt19937& rng, int h) {
  std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
  std::vector<float> v(h);
  for (auto& x : v) x = dist(rng);
  return HostValue::tensor({1, h}, std::move(v));
}

std::vector<InstanceInput> rnn_inputs_with_lengths(const std::vector<int>& lengths, int h,
                                                   unsigned seed,
                                                   const std::string& key = "inps") {
  std::mt19937 rng(seed);
  std::vector<InstanceInput> out;
  for (int len : lengths) {
    std::vector<HostValue> items;
    for (int k = 0; k < len; ++k) items.push_back(random_vec(rng, h));
    InstanceInput inst;
    inst[key] = HostValue::list(std::move(items));
    out.push_back(std::move(inst));
  }
  return out;
}

// Strong phase monotonicity: all batches of phase p-1 execute before any
// batch of phase p.
bool phase_monotone(const EvalResult& res) {
  std::map<int, std::pair<size_t, size_t>> range;  // phase -> (min,max) batch index
  for (size_t i = 0; i < res.trace.batches.size(); ++i) {
    int p = res.trace.batches[i].phase;
    auto it = range.find(p);
    if (it == range.end()) range[p] = {i, i};
    else it->second.second = i;
  }
  size_t prev_max = 0;
  bool first = true;
  for (const auto& [p, mm] : range) {
    if (!first && mm.first <= prev_max) return false;
    prev_max = mm.second;
    first = false;
  }
  return true;
}

// ---------------------------------------------------------------------------

void criterion_1_and_2() {
  auto start = std::chrono::steady_clock::now();
  bool equiv_ok = true, law_ok = true, dep_ok = true;
  std::string first_failure;
  for (const auto& name : zoo::model_names()) {
    for (int batch : {1, 2, 8, 64}) {
      for (auto sched : {ExecOptions::Scheduler::kDepth, ExecOptions::Scheduler::kAgenda}) {
        for (auto gather : {backend::GatherMode::kFused, backend::GatherMode::kExplicit}) {
          for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
            ExecOptions opts;
            opts.scheduler = sched;
            opts.gather = gather;
            RunSetup s = setup_run(name, batch, seed, opts);
            EvalResult res = evaluate_batch(s.model, s.params, s.inputs);
            if (!outputs_match_reference(s, res)) {
              equiv_ok = false;
              if (first_failure.empty())
                first_failure = name + " batch=" + std::to_string(batch);
            }
            if (!check_dependency_order(res)) dep_ok = false;
            if (sched == ExecOptions::Scheduler::kDepth && !check_depth_batching_law(res))
              law_ok = false;
          }
        }
      }
    }
  }
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start)
                     .count();
  bool in_budget = elapsed < 60000;
  report(1, equiv_ok && in_budget,
         "equivalence: 7 models x {1,2,8,64} x {depth,agenda} x {fused,explicit} x 5 seeds, "
         "bitwise vs reference (" +
             std::to_string(elapsed) + " ms, budget 60000 ms)" +
             (first_failure.empty() ? "" : "; first failure: " + first_failure));

  // Criterion 2, exact RNN counts: batch 8, equal length 10.
  ExecOptions opts;
  RunSetup s = setup_run("rnn", 1, 7, opts);
  s.inputs = rnn_inputs_with_lengths(std::vector<int>(8, 10), 32, 11);
  EvalResult res = evaluate_batch(s.model, s.params, s.inputs);
  bool ok = outputs_match_reference(s, res);
  int recurrent = sig_by_name(s.model, "sigmoid_add_dense");
  int transform = sig_by_name(s.model, "bias_dense");
  int output = sig_by_name(s.model, "relu_bias_dense");
  ok = ok && launches_for_sig(res, recurrent) == 10;
  ok = ok && launches_for_sig(res, transform) == 1;
  ok = ok && launches_for_sig(res, output) == 1;
  // Topological-depth oracle: recurrent nodes of equal brute-force depth
  // co-reside; the oracle depths match the trace depths shifted by the
  // hoisted transform level.
  auto depths = brute_force_depths(res);
  std::map<int, std::set<int>> oracle_groups;
  for (const auto& n : res.nodes)
    if (n.sig_id == recurrent) oracle_groups[depths.at(n.id)].insert(n.id);
  ok = ok && static_cast<int>(oracle_groups.size()) == 10;
  for (const auto& b : res.trace.batches) {
    if (b.sig != recurrent) continue;
    std::set<int> ids(b.node_ids.begin(), b.node_ids.end());
    bool matched = false;
    for (const auto& [d, group] : oracle_groups) matched = matched || group == ids;
    ok = ok && matched;
  }
  ok = ok && law_ok && dep_ok;
  report(2, ok,
         "depth-batching law (G.2) on every depth trace; RNN batch 8 len 10: recurrent "
         "launches = 10, hoisted input transform = 1, output = 1 [topological-depth oracle]");
}

void criterion_3() {
  ExecOptions on, off;
  off.hoist = false;
  RunSetup a = setup_run("rnn", 1, 13, on);
  RunSetup b = setup_run("rnn", 1, 13, off);
  a.inputs = rnn_inputs_with_lengths({4, 6, 8, 10}, 32, 17);
  b.inputs = a.inputs;
  EvalResult ra = evaluate_batch(a.model, a.params, a.inputs);
  EvalResult rb = evaluate_batch(b.model, b.params, b.inputs);
  bool ok = outputs_match_reference(a, ra) && outputs_match_reference(b, rb);
  ok = ok && rb.trace.kernel_launches > ra.trace.kernel_launches;
  int transform = sig_by_name(a.model, "bias_dense");
  long transform_batches = launches_for_sig(ra, transform);
  int total_tokens = 4 + 6 + 8 + 10;
  bool one_batch = transform_batches == 1;
  for (const auto& bt : ra.trace.batches)
    if (bt.sig == transform) one_batch = one_batch && bt.size == total_tokens;
  ok = ok && one_batch;
  report(3, ok,
         "hoisting: disabling it strictly raises RNN launches (" +
             std::to_string(rb.trace.kernel_launches) + " vs " +
             std::to_string(ra.trace.kernel_launches) +
             "); with hoisting all input transforms form one batch of " +
             std::to_string(total_tokens));
}

void criterion_4() {
  // Counter depths without phase gating reproduce the figure's eager
  // schedule; half the instances take each branch.
  auto run = [&](bool ghost_on) {
    ExecOptions opts;
    opts.hoist = false;
    opts.phases = false;
    opts.ghost = ghost_on;
    RunSetup s = setup_run("fig5", 4, 37, opts);
    EvalResult res = evaluate_batch(s.model, s.params, s.inputs);
    return std::pair(std::move(s), std::move(res));
  };
  auto [s_off, off] = run(false);
  auto [s_on, on] = run(true);
  int b_sig = sig_by_name(s_on.model, "sigmoid_bias_dense");
  // Post-conditional batches: the B launches beyond the branch copies.
  auto post_batches = [&](const EvalResult& res, const RunSetup& s) {
    // The post-conditional op consumes the branch result; identify its nodes
    // as the B nodes whose producers include another B node of the same
    // instance or the extra op.
    std::map<int, const DFGNode*> by_id;
    for (const auto& n : res.nodes) by_id[n.id] = &n;
    std::set<int> post_nodes;
    for (const auto& n : res.nodes) {
      if (n.sig_id != b_sig) continue;
      for (int p : n.producers)
        if (by_id.at(p)->sig_id == b_sig) post_nodes.insert(n.id);
    }
    std::set<int> batches;
    for (size_t i = 0; i < res.trace.batches.size(); ++i)
      for (int id : res.trace.batches[i].node_ids)
        if (post_nodes.count(id)) batches.insert(static_cast<int>(i));
    return batches.size();
  };
  size_t post_off = post_batches(off, s_off);
  size_t post_on = post_batches(on, s_on);
  bool outputs_same = true;
  for (size_t i = 0; i < on.outputs.size(); ++i)
    outputs_same = outputs_same && bitwise_equal(on.outputs[i], off.outputs[i]);
  bool ok = post_off == 2 && post_on == 1 && outputs_same &&
            outputs_match_reference(s_on, on) && outputs_match_reference(s_off, off);
  report(4, ok,
         "ghost operators: post-conditional batches drop from " + std::to_string(post_off) +
             " to " + std::to_string(post_on) + " per flush, outputs unchanged");
}

void criterion_5() {
  auto run = [&](bool phases_on) {
    ExecOptions opts;
    opts.phases = phases_on;
    RunSetup s = setup_run("birnn", 1, 19, opts);
    s.inputs = rnn_inputs_with_lengths({1, 2, 3, 4, 5, 6, 7, 8}, 32, 23, "inps_list");
    EvalResult res = evaluate_batch(s.model, s.params, s.inputs);
    bool equiv = outputs_match_reference(s, res);
    return std::tuple(std::move(s), std::move(res), equiv);
  };
  auto [s_on, on, eq_on] = run(true);
  auto [s_off, off, eq_off] = run(false);
  int concat_sig = sig_by_name(s_on.model, "concat");
  long with_phases = launches_for_sig(on, concat_sig);
  long without = launches_for_sig(off, concat_sig);
  bool gate_ok = phase_monotone(on) && check_phase_order_within_windows(on);
  // Phase gating holds on every all-hints trace of the zoo.
  for (const auto& name : zoo::model_names()) {
    RunSetup s = setup_run(name, 4, 29);
    EvalResult res = evaluate_batch(s.model, s.params, s.inputs);
    gate_ok = gate_ok && check_phase_order_within_windows(res);
  }
  bool ok = eq_on && eq_off && with_phases == 1 && without == 8 && gate_ok;
  report(5, ok,
         "phases: BiRNN output launches = " + std::to_string(with_phases) +
             " with phases vs " + std::to_string(without) +
             " = max length without; gating order holds on all traces");
}

void criterion_6() {
  ExecOptions coarse, fine;
  fine.coarsen = false;
  fine.horizontal_fuse = false;
  RunSetup a = setup_run("treelstm", 64, 31, coarse);
  RunSetup b = setup_run("treelstm", 64, 31, fine);
  EvalResult ra = evaluate_batch(a.model, a.params, a.inputs);
  EvalResult rb = evaluate_batch(b.model, b.params, b.inputs);
  double ratio = static_cast<double>(rb.trace.kernel_launches) /
                 static_cast<double>(ra.trace.kernel_launches);
  bool ok = outputs_match_reference(a, ra) && outputs_match_reference(b, rb) && ratio >= 4.0;
  std::ostringstream os;
  os.precision(3);
  os << "coarsening+fusion: TreeLSTM batch 64 launches " << rb.trace.kernel_launches << " -> "
     << ra.trace.kernel_launches << " (" << ratio << "x >= 4.0x)";
  report(6, ok, os.str());
}

void criterion_7() {
  ExecOptions opts;
  RunSetup s = setup_run("drnn", 8, 1, opts);
  EvalResult batched = evaluate_batch(s.model, s.params, s.inputs);
  bool ok = outputs_match_reference(s, batched);
  long solo_launches = 0, max_decisions = 0;
  for (size_t i = 0; i < s.inputs.size(); ++i) {
    std::vector<InstanceInput> one = {s.inputs[i]};
    EvalResult solo = evaluate_batch(s.model, s.params, one);
    solo_launches += solo.trace.kernel_launches;
    max_decisions = std::max(max_decisions, solo.trace.sync_points);
    // Replayed decisions: the solo output must equal the batched output.
    ok = ok && bitwise_equal(solo.outputs[0], batched.outputs[i]);
  }
  ok = ok && batched.trace.kernel_launches < solo_launches;
  ok = ok && batched.trace.sync_points <= max_decisions + 1;
  report(7, ok,
         "fibers: DRNN batch 8 launches " + std::to_string(batched.trace.kernel_launches) +
             " < " + std::to_string(solo_launches) + " sequential; sync points " +
             std::to_string(batched.trace.sync_points) + " <= " +
             std::to_string(max_decisions + 1));
}

void criterion_8() {
  bool ok = true;
  std::string detail;
  for (const auto& name : zoo::model_names()) {
    ExecOptions fused, expl;
    expl.gather = backend::GatherMode::kExplicit;
    RunSetup a = setup_run(name, 8, 1, fused);
    RunSetup b = setup_run(name, 8, 1, expl);
    EvalResult ra = evaluate_batch(a.model, a.params, a.inputs);
    EvalResult rb = evaluate_batch(b.model, b.params, b.inputs);
    bool model_ok = ra.trace.gather_bytes == 0 && rb.trace.gather_bytes > 0;
    for (size_t i = 0; i < ra.outputs.size(); ++i)
      model_ok = model_ok && bitwise_equal(ra.outputs[i], rb.outputs[i]);
    if (!model_ok) detail += " " + name;
    ok = ok && model_ok;
  }
  report(8, ok,
         "gather fusion: fused mode moves 0 bytes, explicit mode copies scattered inputs, "
         "outputs bitwise identical" +
             (detail.empty() ? "" : "; failing:" + detail));
}

void criterion_9() {
  ir::TypedProgram tp = ir::infer_types(ir::parse_program(zoo::birnn_source(32)));
  analysis::DuplicationResult dup = analysis::duplicate_for_reuse(tp);
  std::set<std::string> shared;
  for (const auto& [ctx, sites] : dup.report.by_context)
    for (const auto& [site, classes] : sites)
      for (const auto& c : classes)
        if (c.shared)
          for (const auto& p : c.taint.provenance) shared.insert(p);
  std::set<std::string> expect = {"f_rnn_bias", "f_rnn_i_wt", "f_rnn_h_wt", "f_rnn_init",
                                  "b_rnn_bias", "b_rnn_i_wt", "b_rnn_h_wt", "b_rnn_init"};
  bool ok = shared == expect && dup.report.total_conflicts() == 0;

  // MV-RNN: the activation-by-activation products have both operands batched.
  analysis::DuplicationResult mv = analysis::duplicate_for_reuse(
      ir::infer_types(ir::parse_program(zoo::get_model("mvrnn", "small").source)));
  int both_batched = 0;
  std::function<void(const anf::Body&)> scan = [&](const anf::Body& b) {
    for (const auto& in : b.instrs) {
      if (in.kind == anf::Instr::Kind::kPrim && in.op == backend::OpCode::kDense &&
          in.arg_shapes.size() == 2 && in.arg_shapes[1].rows == in.arg_shapes[1].cols &&
          in.arg_shapes[1].rows == 32) {
        const auto& classes = mv.report.merged.at(in.prim_site);
        if (!classes[0].shared && !classes[1].shared) ++both_batched;
      }
      for (const auto& arm : in.arms) scan(*arm.body);
      if (in.then_body) scan(*in.then_body);
      if (in.else_body) scan(*in.else_body);
      if (in.map_body) scan(*in.map_body);
      if (in.ghost_body) scan(*in.ghost_body);
    }
  };
  scan(*mv.module.functions.at("mv").body);
  ok = ok && both_batched == 2;
  report(9, ok,
         "taint/duplication: BiRNN shares exactly the 8 weight/bias/init parameters, zero "
         "post-duplication conflicts; MV-RNN activation products fully batched");
}

void criterion_10() {
  bool ok = true;
  for (const auto& name : zoo::model_names()) {
    ExecOptions d, ag;
    ag.scheduler = ExecOptions::Scheduler::kAgenda;
    RunSetup sd = setup_run(name, 8, 43, d);
    RunSetup sa = setup_run(name, 8, 43, ag);
    EvalResult rd = evaluate_batch(sd.model, sd.params, sd.inputs);
    EvalResult ra = evaluate_batch(sa.model, sa.params, sa.inputs);
    ok = ok && rd.trace.scheduler_ops <= 4 * rd.trace.total_nodes;
    ok = ok && ra.trace.scheduler_ops >= ra.trace.total_nodes + ra.trace.dfg_edges;
  }
  report(10, ok,
         "scheduler work: depth <= 4N on all fixtures, agenda >= N + E (overhead ordering)");
}

}  // namespace

int main() {
  try {
    criterion_1_and_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
  } catch (const std::exception& e) {
    std::cout << "[FAIL] exception: " << e.what() << std::endl;
    ++failures;
  }
  std::cout << (failures == 0 ? "ACCEPTANCE: all criteria passed"
                              : "ACCEPTANCE: " + std::to_string(failures) + " failure(s)")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
