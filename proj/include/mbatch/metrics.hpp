// Run configuration, metrics reports and their JSON encodings.
#pragma once

#include <json.hpp>

#include "mbatch/runtime.hpp"
#include "mbatch/zoo.hpp"

namespace mbatch {
namespace metrics {

using json = nlohmann::ordered_json;
using runtime::CompiledModel;
using runtime::EvalResult;
using runtime::ExecOptions;

struct RunConfig {
  std::string model = "rnn";
  std::string size = "small";
  int batch = 8;
  unsigned seed = 0;
  ExecOptions opts;
  std::string out_path;

  void validate() const;
};

struct MetricsReport {
  RunConfig config;
  runtime::ScheduleTrace trace;
  // One histogram row per (phase, depth, sig): launch count and batch sizes.
  struct HistRow {
    int phase, depth;
    std::string sig;
    int launches = 0;
    std::vector<int> sizes;
  };
  std::vector<HistRow> histogram;
  bool equivalence = false;
};

json config_to_json(const RunConfig& c);
json trace_to_json(const runtime::ScheduleTrace& t);
json report_to_json(const MetricsReport& r);

// Runs one configuration end to end: compile, evaluate, verify against the
// reference interpreter, and collect the report.
struct RunOutput {
  MetricsReport report;
  EvalResult result;
  CompiledModel model;
};
RunOutput run_once(const RunConfig& config);

// Ordered ablation rows as the evaluation tabulates them.
std::vector<std::pair<std::string, ExecOptions>> ablation_rows(const ExecOptions& base);

}  // namespace metrics
}  // namespace mbatch
