#include "mbatch/metrics.hpp"

#include <map>

namespace mbatch {
namespace metrics {

void RunConfig::validate() const {
  MBATCH_CHECK(batch >= 1, "batch size must be at least 1");
  bool known = false;
  for (const auto& n : zoo::model_names()) known = known || n == model;
  known = known || model == "fig5";
  MBATCH_CHECK(known, "unknown model '" + model + "'");
  MBATCH_CHECK(size == "small" || size == "large", "size must be small or large");
}

json config_to_json(const RunConfig& c) {
  json j;
  j["model"] = c.model;
  j["size"] = c.size;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  j["scheduler"] = c.opts.scheduler == ExecOptions::Scheduler::kDepth ? "depth" : "agenda";
  j["gather"] = c.opts.gather == backend::GatherMode::kFused ? "fused" : "explicit";
  j["coarsen"] = c.opts.coarsen;
  j["ghost"] = c.opts.ghost;
  j["phases"] = c.opts.phases;
  j["hoist"] = c.opts.hoist;
  j["horizontal_fuse"] = c.opts.horizontal_fuse;
  return j;
}

json trace_to_json(const runtime::ScheduleTrace& t) {
  json j;
  j["batches"] = json::array();
  for (const auto& b : t.batches) {
    json row;
    row["phase"] = b.phase;
    row["depth"] = b.depth;
    row["sig"] = b.sig;
    row["size"] = b.size;
    row["ghost"] = b.ghost;
    j["batches"].push_back(row);
  }
  j["counters"] = {{"kernel_launches", t.kernel_launches},
                   {"total_nodes", t.total_nodes},
                   {"scheduler_ops", t.scheduler_ops},
                   {"sync_points", t.sync_points},
                   {"gather_bytes", t.gather_bytes}};
  return j;
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["config"] = config_to_json(r.config);
  j["trace"] = trace_to_json(r.trace);
  j["histogram"] = json::array();
  for (const auto& row : r.histogram) {
    json h;
    h["phase"] = row.phase;
    h["depth"] = row.depth;
    h["sig"] = row.sig;
    h["launches"] = row.launches;
    h["sizes"] = row.sizes;
    j["histogram"].push_back(h);
  }
  j["equivalence"] = r.equivalence;
  return j;
}

RunOutput run_once(const RunConfig& config) {
  config.validate();
  RunOutput out;
  zoo::ModelSpec spec = zoo::get_model(config.model, config.size);
  ir::Program prog = ir::parse_program(spec.source);
  out.model = runtime::compile(prog, config.opts);
  auto params = zoo::make_params(spec, out.model.typed.program, config.seed);
  auto inputs = zoo::make_inputs(spec, out.model.typed.program, config.seed, config.batch);
  out.result = runtime::evaluate_batch(out.model, params, inputs);

  auto ref = runtime::reference_evaluate(out.model, params, inputs);
  bool ok = ref.size() == out.result.outputs.size();
  for (size_t i = 0; ok && i < ref.size(); ++i)
    ok = runtime::bitwise_equal(ref[i], out.result.outputs[i]);

  out.report.config = config;
  out.report.trace = out.result.trace;
  out.report.equivalence = ok;
  std::map<std::tuple<int, int, int>, MetricsReport::HistRow> hist;
  for (const auto& b : out.result.trace.batches) {
    if (b.ghost) continue;
    auto key = std::tuple(b.phase, b.depth, b.sig);
    auto& row = hist[key];
    row.phase = b.phase;
    row.depth = b.depth;
    row.sig = out.model.kernels.signatures[b.sig].name;
    ++row.launches;
    row.sizes.push_back(b.size);
  }
  for (auto& [k, row] : hist) out.report.histogram.push_back(std::move(row));
  return out;
}

std::vector<std::pair<std::string, ExecOptions>> ablation_rows(const ExecOptions& base) {
  auto all_off = [&]() {
    ExecOptions o = base;
    o.coarsen = o.ghost = o.phases = o.hoist = o.horizontal_fuse = false;
    o.gather = backend::GatherMode::kExplicit;
    return o;
  };
  std::vector<std::pair<std::string, ExecOptions>> rows;
  ExecOptions cur = all_off();
  rows.push_back({"baseline", cur});
  cur.horizontal_fuse = true;
  rows.push_back({"+fusion", cur});
  cur.coarsen = true;
  rows.push_back({"+coarsen", cur});
  cur.hoist = true;
  rows.push_back({"+depth-hints", cur});
  cur.phases = true;
  cur.ghost = true;
  rows.push_back({"+phases/ghost", cur});
  cur.gather = backend::GatherMode::kFused;
  rows.push_back({"+gather-fuse", cur});
  return rows;
}

}  // namespace metrics
}  // namespace mbatch
