#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mbatch/metrics.hpp"
#include "test_util.hpp"

using namespace mbatch;
using metrics::RunConfig;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

#ifdef MBATCH_BIN_PATH
int run_cli(const std::string& args) {
  std::string cmd = std::string(MBATCH_BIN_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}
#endif

}  // namespace

TEST_CASE("same config and seed produce byte-identical reports") {
  RunConfig config;
  config.model = "drnn";
  config.batch = 4;
  config.seed = 9;
  auto a = metrics::report_to_json(metrics::run_once(config).report).dump(2);
  auto b = metrics::report_to_json(metrics::run_once(config).report).dump(2);
  CHECK(a == b);
}

TEST_CASE("reports never claim success without reference equivalence") {
  RunConfig config;
  config.model = "stackrnn";
  config.batch = 3;
  config.seed = 2;
  metrics::RunOutput out = metrics::run_once(config);
  CHECK(out.report.equivalence);
  // The report carries the full trace schema.
  metrics::json j = metrics::report_to_json(out.report);
  // Launch count agrees with the per-(phase,depth,sig) histogram.
  long hist_launches = 0;
  for (const auto& row : out.report.histogram) hist_launches += row.launches;
  CHECK(hist_launches == out.report.trace.kernel_launches);
  CHECK(j["trace"].contains("batches"));
  CHECK(j["trace"]["counters"].contains("kernel_launches"));
  CHECK(j["trace"]["counters"].contains("total_nodes"));
  CHECK(j["trace"]["counters"].contains("scheduler_ops"));
  CHECK(j["trace"]["counters"].contains("sync_points"));
  CHECK(j["trace"]["counters"].contains("gather_bytes"));
}

TEST_CASE("zoo coverage: every toggle combination runs and verifies at batch 2") {
  using Sched = runtime::ExecOptions::Scheduler;
  for (const auto& name : zoo::model_names()) {
    for (int mask = 0; mask < 32; ++mask) {
      for (Sched sched : {Sched::kDepth, Sched::kAgenda}) {
        for (auto gather : {backend::GatherMode::kFused, backend::GatherMode::kExplicit}) {
          RunConfig config;
          config.model = name;
          config.batch = 2;
          config.seed = 5;
          config.opts.coarsen = mask & 1;
          config.opts.ghost = mask & 2;
          config.opts.phases = mask & 4;
          config.opts.hoist = mask & 8;
          config.opts.horizontal_fuse = mask & 16;
          config.opts.scheduler = sched;
          config.opts.gather = gather;
          metrics::RunOutput out = metrics::run_once(config);
          CHECK_MESSAGE(out.report.equivalence, name, " mask=", mask,
                        " sched=", static_cast<int>(sched));
        }
      }
    }
  }
}

TEST_CASE("ablation rows follow the documented progression") {
  auto rows = metrics::ablation_rows(runtime::ExecOptions{});
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].first == "baseline");
  CHECK(rows[1].first == "+fusion");
  CHECK(rows[2].first == "+coarsen");
  CHECK(rows[3].first == "+depth-hints");
  CHECK(rows[4].first == "+phases/ghost");
  CHECK(rows[5].first == "+gather-fuse");
  CHECK(!rows[0].second.coarsen);
  CHECK(rows[5].second.coarsen);
  CHECK(rows[4].second.gather == backend::GatherMode::kExplicit);
  CHECK(rows[5].second.gather == backend::GatherMode::kFused);
}

TEST_CASE("identical ablation configurations give identical reports") {
  RunConfig config;
  config.model = "rnn";
  config.batch = 4;
  config.seed = 3;
  config.opts.coarsen = false;
  config.opts.ghost = false;
  config.opts.phases = false;
  config.opts.hoist = false;
  config.opts.horizontal_fuse = false;
  auto a = metrics::report_to_json(metrics::run_once(config).report).dump();
  auto b = metrics::report_to_json(metrics::run_once(config).report).dump();
  CHECK(a == b);
}

#ifdef MBATCH_BIN_PATH
TEST_CASE("cli: run writes deterministic JSON and exits zero") {
  std::string out1 = "/tmp/mbatch_cli_a.json";
  std::string out2 = "/tmp/mbatch_cli_b.json";
  int rc1 = run_cli("run --model rnn --batch 8 --seed 7 --scheduler depth --out " + out1);
  int rc2 = run_cli("run --model rnn --batch 8 --seed 7 --scheduler depth --out " + out2);
  CHECK(rc1 == 0);
  CHECK(rc2 == 0);
  CHECK(slurp(out1) == slurp(out2));
  CHECK(!slurp(out1).empty());
  std::remove(out1.c_str());
  std::remove(out2.c_str());
}

TEST_CASE("cli: invalid model exits nonzero") {
  CHECK(run_cli("run --model not_a_model") != 0);
}

TEST_CASE("cli: compare, profile, analyze and kernels work end to end") {
  CHECK(run_cli("compare --model rnn --batch 4 --out /tmp/mbatch_cmp.json") == 0);
  CHECK(run_cli("profile --model treelstm --batch 4 --out /tmp/mbatch_prof.json") == 0);
  CHECK(run_cli("analyze --model birnn --out /tmp/mbatch_an.json") == 0);
  CHECK(run_cli("kernels --model rnn --out /tmp/mbatch_k.json") == 0);
  auto k = slurp("/tmp/mbatch_k.json");
  CHECK(k.find("sigmoid_add_dense") != std::string::npos);
  auto an = slurp("/tmp/mbatch_an.json");
  CHECK(an.find("SHARED") != std::string::npos);
  for (const char* f : {"/tmp/mbatch_cmp.json", "/tmp/mbatch_prof.json", "/tmp/mbatch_an.json",
                        "/tmp/mbatch_k.json"})
    std::remove(f);
}
#endif
