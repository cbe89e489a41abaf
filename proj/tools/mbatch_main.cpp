// mbatch: run, compare, profile and inspect auto-batched model executions.
#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "mbatch/metrics.hpp"

using namespace mbatch;
using json = metrics::json;
using metrics::RunConfig;

namespace {

void write_output(const json& j, const std::string& path) {
  std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(path);
    MBATCH_CHECK(out.good(), "cannot open output file " + path);
    out << text;
  }
}

void add_common_flags(CLI::App* cmd, RunConfig& config, bool* agenda, bool* explicit_gather,
                      bool* no_coarsen, bool* no_ghost, bool* no_phases, bool* no_hoist,
                      bool* no_hfuse) {
  cmd->add_option("--model", config.model, "model name (see `mbatch list`)");
  cmd->add_option("--size", config.size, "model size: small|large");
  cmd->add_option("--batch", config.batch, "mini-batch size");
  cmd->add_option("--seed", config.seed, "seed for parameters and inputs");
  cmd->add_option("--scheduler", [agenda](const std::vector<std::string>& v) {
        *agenda = v[0] == "agenda";
        return v[0] == "agenda" || v[0] == "depth";
      }, "depth|agenda");
  cmd->add_option("--gather", [explicit_gather](const std::vector<std::string>& v) {
        *explicit_gather = v[0] == "explicit";
        return v[0] == "explicit" || v[0] == "fused";
      }, "fused|explicit");
  cmd->add_flag("--no-coarsen", *no_coarsen, "schedule at single-op granularity");
  cmd->add_flag("--no-ghost", *no_ghost, "disable ghost-operator insertion");
  cmd->add_flag("--no-phases", *no_phases, "disable program phases");
  cmd->add_flag("--no-hoist", *no_hoist, "disable static depth hints");
  cmd->add_flag("--no-hfuse", *no_hfuse, "disable horizontal fusion");
  cmd->add_option("--out", config.out_path, "write JSON here instead of stdout");
}

void apply_flags(RunConfig& config, bool agenda, bool explicit_gather, bool no_coarsen,
                 bool no_ghost, bool no_phases, bool no_hoist, bool no_hfuse) {
  config.opts.scheduler = agenda ? runtime::ExecOptions::Scheduler::kAgenda
                                 : runtime::ExecOptions::Scheduler::kDepth;
  config.opts.gather =
      explicit_gather ? backend::GatherMode::kExplicit : backend::GatherMode::kFused;
  config.opts.coarsen = !no_coarsen;
  config.opts.ghost = !no_ghost;
  config.opts.phases = !no_phases;
  config.opts.hoist = !no_hoist;
  config.opts.horizontal_fuse = !no_hfuse;
  config.opts.seed = config.seed;
}

int cmd_run(const RunConfig& config) {
  metrics::RunOutput out = metrics::run_once(config);
  write_output(metrics::report_to_json(out.report), config.out_path);
  if (!out.report.equivalence) {
    std::cerr << "error: batched outputs diverge from the reference interpreter\n";
    return 1;
  }
  return 0;
}

int cmd_compare(const RunConfig& config) {
  json table;
  table["config"] = metrics::config_to_json(config);
  table["rows"] = json::array();
  std::vector<std::string> lines;
  size_t label_w = 14;
  for (const auto& [label, opts] : metrics::ablation_rows(config.opts)) {
    RunConfig row_config = config;
    row_config.opts = opts;
    metrics::RunOutput out = metrics::run_once(row_config);
    if (!out.report.equivalence) {
      std::cerr << "error: row '" << label << "' failed reference equivalence; aborting\n";
      return 1;
    }
    json row;
    row["label"] = label;
    row["options"] = metrics::config_to_json(row_config);
    row["counters"] = metrics::trace_to_json(out.report.trace)["counters"];
    table["rows"].push_back(row);
    std::ostringstream line;
    line << std::left << std::setw(static_cast<int>(label_w)) << label << " launches "
         << std::setw(7) << out.report.trace.kernel_launches << " nodes " << std::setw(7)
         << out.report.trace.total_nodes << " sched_ops " << std::setw(9)
         << out.report.trace.scheduler_ops << " sync " << std::setw(4)
         << out.report.trace.sync_points << " gather_bytes "
         << out.report.trace.gather_bytes;
    lines.push_back(line.str());
  }
  for (const auto& l : lines) std::cout << l << "\n";
  write_output(table, config.out_path);
  return 0;
}

int cmd_profile(const RunConfig& config) {
  zoo::ModelSpec spec = zoo::get_model(config.model, config.size);
  ir::Program prog = ir::parse_program(spec.source);
  runtime::CompiledModel model = runtime::compile(prog, config.opts);
  auto params = zoo::make_params(spec, model.typed.program, config.seed);
  auto inputs = zoo::make_inputs(spec, model.typed.program, config.seed, config.batch);
  runtime::ProfileReport rep = runtime::profile_invocations(model, params, inputs);
  json j;
  j["config"] = metrics::config_to_json(config);
  j["signatures"] = json::array();
  for (int sig : rep.ranking) {
    json row;
    row["sig"] = model.kernels.signatures[sig].name;
    row["invocations"] = rep.counts.at(sig);
    row["static_nesting_estimate"] =
        rep.static_estimate.count(sig) ? rep.static_estimate.at(sig) : 0;
    j["signatures"].push_back(row);
  }
  write_output(j, config.out_path);
  return 0;
}

int cmd_analyze(const RunConfig& config) {
  zoo::ModelSpec spec = zoo::get_model(config.model, config.size);
  ir::Program prog = ir::parse_program(spec.source);
  runtime::CompiledModel model = runtime::compile(prog, config.opts);
  json j;
  j["config"] = metrics::config_to_json(config);

  j["reuse"] = json::array();
  for (const auto& [ctx, sites] : model.report.by_context) {
    json c;
    c["function"] = ctx.callee;
    c["caller_site"] = ctx.caller_site;
    c["sites"] = json::array();
    for (const auto& [site, classes] : sites) {
      json s;
      s["prim_site"] = site;
      s["args"] = json::array();
      for (const auto& cls : classes) {
        json a;
        a["class"] = cls.shared ? "SHARED" : "BATCHED";
        if (cls.shared) a["provenance"] = cls.taint.provenance;
        s["args"].push_back(a);
      }
      c["sites"].push_back(s);
    }
    j["reuse"].push_back(c);
  }
  j["skipped_functions"] = model.report.skipped;

  j["blocks"] = json::array();
  for (const auto& b : model.blocks.blocks) {
    json row;
    row["id"] = b.id;
    row["function"] = b.func;
    row["ops"] = b.prim_sites.size();
    row["inputs"] = b.inputs;
    row["outputs"] = b.outputs;
    row["static"] = b.is_static;
    auto it = model.hoist.static_depth.find(b.id);
    if (it != model.hoist.static_depth.end()) row["static_depth"] = it->second;
    row["signature"] = model.kernels.signatures
                           [model.kernels.binding_of_block.at(b.id).sig_id].name;
    int fused = 0;
    for (const auto& g : b.fusion_groups) fused += static_cast<int>(g.sites.size());
    row["horizontally_fused_ops"] = fused;
    j["blocks"].push_back(row);
  }

  j["ghost_plan"] = json::array();
  for (const auto& e : model.ghost_plan.entries) {
    json row;
    row["conditional"] = e.if_expr_id;
    row["branch"] = e.pad_then ? "then" : "else";
    row["units"] = e.count;
    j["ghost_plan"].push_back(row);
  }
  j["flagged_conditionals"] = model.ghost_plan.flagged_if_sites;

  j["phases"] = json::object();
  j["phases"]["count"] = model.phases.num_phases;
  j["phases"]["stage_phase"] = model.phases.stage_phase;
  write_output(j, config.out_path);
  return 0;
}

int cmd_kernels(const RunConfig& config) {
  zoo::ModelSpec spec = zoo::get_model(config.model, config.size);
  ir::Program prog = ir::parse_program(spec.source);
  runtime::CompiledModel model = runtime::compile(prog, config.opts);
  json j;
  j["config"] = metrics::config_to_json(config);
  j["signatures"] = json::array();
  for (const auto& sig : model.kernels.signatures) {
    json s;
    s["id"] = sig.id;
    s["name"] = sig.name;
    s["ghost"] = sig.ghost;
    s["shared_params"] = json::array();
    for (const auto& [name, shape] : sig.shared_params)
      s["shared_params"].push_back({{"name", name}, {"shape", {shape.rows, shape.cols}}});
    s["batched_params"] = json::array();
    for (const auto& [name, shape] : sig.batched_params)
      s["batched_params"].push_back({{"name", name}, {"shape", {shape.rows, shape.cols}}});
    s["op_dag"] = json::array();
    for (const auto& step : sig.op_dag) {
      json op;
      op["op"] = step.kind == backend::PlanStep::Kind::kFusedDense
                     ? std::string("dense_x") + std::to_string(step.ins.size() - 1)
                     : backend::op_name(step.op);
      op["out_shape"] = {step.out_shape.rows, step.out_shape.cols};
      s["op_dag"].push_back(op);
    }
    j["signatures"].push_back(s);
  }
  write_output(j, config.out_path);
  return 0;
}

}  // namespace

int cmd_format(const std::string& path) {
  std::ifstream in(path);
  MBATCH_CHECK(in.good(), "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  ir::Program p = ir::parse_program(os.str());
  std::cout << ir::pretty_print(p);
  return 0;
}

int cmd_source(const RunConfig& config) {
  zoo::ModelSpec spec = zoo::get_model(config.model, config.size);
  std::cout << ir::pretty_print(ir::parse_program(spec.source));
  return 0;
}

int main(int argc, char** argv) {
  CLI::App app{"auto-batching pipeline for dynamic dataflow programs"};
  app.require_subcommand(1);

  RunConfig config;
  bool agenda = false, explicit_gather = false;
  bool no_coarsen = false, no_ghost = false, no_phases = false, no_hoist = false,
       no_hfuse = false;
  std::string format_path;

  CLI::App* run = app.add_subcommand("run", "evaluate a batch and emit a metrics report");
  CLI::App* compare = app.add_subcommand("compare", "ablation table across optimizations");
  CLI::App* profile = app.add_subcommand("profile", "kernel invocation frequencies");
  CLI::App* analyze = app.add_subcommand("analyze", "static analysis report");
  CLI::App* kernels = app.add_subcommand("kernels", "dump kernel signatures");
  CLI::App* list = app.add_subcommand("list", "list zoo models");
  CLI::App* format = app.add_subcommand("format", "canonically format a .mbir file");
  format->add_option("file", format_path, "path to a .mbir source file")->required();
  CLI::App* source = app.add_subcommand("source", "print a zoo model in .mbir form");
  source->add_option("--model", config.model, "model name");
  source->add_option("--size", config.size, "small|large");
  for (CLI::App* cmd : {run, compare, profile, analyze, kernels})
    add_common_flags(cmd, config, &agenda, &explicit_gather, &no_coarsen, &no_ghost,
                     &no_phases, &no_hoist, &no_hfuse);

  CLI11_PARSE(app, argc, argv);
  apply_flags(config, agenda, explicit_gather, no_coarsen, no_ghost, no_phases, no_hoist,
              no_hfuse);

  try {
    if (list->parsed()) {
      for (const auto& n : zoo::model_names()) std::cout << n << "\n";
      std::cout << "fig5\n";
      return 0;
    }
    if (format->parsed()) return cmd_format(format_path);
    if (source->parsed()) return cmd_source(config);
    if (run->parsed()) return cmd_run(config);
    if (compare->parsed()) return cmd_compare(config);
    if (profile->parsed()) return cmd_profile(config);
    if (analyze->parsed()) return cmd_analyze(config);
    if (kernels->parsed()) return cmd_kernels(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
