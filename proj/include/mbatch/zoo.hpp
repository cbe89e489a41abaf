// The evaluation model zoo: sequence, tree and tensor-dependent control
// flow models at desk scale, with seeded input generators.
#pragma once

#include "mbatch/runtime.hpp"

namespace mbatch {
namespace zoo {

using runtime::HostValue;
using runtime::InstanceInput;
using runtime::ParamEnv;

struct ModelSpec {
  std::string name;
  std::string source;           // text IR
  int hidden = 32;
};

// name in {rnn, birnn, treelstm, mvrnn, nestedrnn, drnn, stackrnn, fig5};
// size "small" (hidden 32) or "large" (hidden 64).
ModelSpec get_model(const std::string& name, const std::string& size = "small");
std::vector<std::string> model_names();  // the seven evaluation models

// Model parameters drawn uniformly from [-0.5, 0.5); deterministic in seed.
ParamEnv make_params(const ModelSpec& spec, const ir::Program& program, unsigned seed);

// Per-instance inputs: random sequences (lengths 4..12), random full binary
// trees (7..31 nodes), random vectors; deterministic in (seed, batch).
std::vector<InstanceInput> make_inputs(const ModelSpec& spec, const ir::Program& program,
                                       unsigned seed, int batch);

// The paper-scale RNN listing used as a parser/inference fixture.
std::string listing1_source();
// The bidirectional-RNN listing with forward/backward parameter sets.
std::string birnn_source(int hidden);

}  // namespace zoo
}  // namespace mbatch
