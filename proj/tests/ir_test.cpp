#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbatch/ir.hpp"
#include "mbatch/zoo.hpp"

using namespace mbatch;
using namespace mbatch::ir;

TEST_CASE("listing-style rnn parses with two functions and seven declarations") {
  Program p = parse_program(zoo::listing1_source());
  CHECK(p.functions.size() == 2);
  CHECK(p.functions.count("rnn") == 1);
  CHECK(p.functions.count("main") == 1);
  CHECK(p.params.size() == 7);
  int inputs = 0;
  for (const auto& d : p.params) inputs += d.is_instance_input ? 1 : 0;
  CHECK(inputs == 1);  // inps
}

TEST_CASE("empty source is a syntax error") {
  CHECK_THROWS_WITH_AS(parse_program(""), doctest::Contains("expected definition"),
                       ParseError);
}

TEST_CASE("birnn listing parses with reverse_list, rnn and main") {
  Program p = parse_program(zoo::birnn_source(32));
  CHECK(p.functions.size() == 3);
  CHECK(p.functions.count("reverse_list") == 1);
  CHECK(p.functions.count("rnn") == 1);
  CHECK(p.functions.count("main") == 1);
}

TEST_CASE("duplicate definitions are rejected") {
  const char* src = R"(
def @f(x: Tensor[(1, 4)]) { x }
def @f(x: Tensor[(1, 4)]) { x }
def @main(a: Tensor[(1, 4)]) { @f(a) }
)";
  CHECK_THROWS_WITH_AS(parse_program(src), doctest::Contains("duplicate definition"),
                       ParseError);
}

TEST_CASE("unknown function names are rejected") {
  const char* src = "def @main(a: Tensor[(1, 4)]) { @nope(a) }";
  CHECK_THROWS_WITH_AS(parse_program(src), doctest::Contains("unknown identifier"),
                       ParseError);
}

TEST_CASE("syntax errors carry line and column") {
  const char* src = "def @main(a: Tensor[(1, 4)]) {\n  let x = ;\n  x\n}";
  try {
    parse_program(src);
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
}

TEST_CASE("round trip: parse after pretty print is structurally equal") {
  for (const auto& name :
       {"rnn", "birnn", "treelstm", "mvrnn", "nestedrnn", "drnn", "stackrnn", "fig5"}) {
    zoo::ModelSpec spec = zoo::get_model(name, "small");
    Program p = parse_program(spec.source);
    Program q = parse_program(pretty_print(p));
    CHECK_MESSAGE(program_equal(p, q), "round trip failed for ", name);
    // And printing is a fixpoint.
    CHECK(pretty_print(p) == pretty_print(q));
  }
  Program p = parse_program(zoo::listing1_source());
  CHECK(program_equal(p, parse_program(pretty_print(p))));
}

// ---------------------------------------------------------------------------
// Type inference

TEST_CASE("dense shape rule") {
  const char* src = R"(
def @main(x: Tensor[(1, 256)], w: Tensor[(256, 256)]) { nn.dense(x, w) }
)";
  TypedProgram tp = infer_types(parse_program(src));
  const FuncDef& main_fd = tp.program.functions.at("main");
  CHECK(type_equal(main_fd.ret_type, Type::tensor(1, 256)));
}

TEST_CASE("elementwise shape mismatch is reported with shapes") {
  const char* src = R"(
def @main(a: Tensor[(1, 256)], b: Tensor[(1, 128)]) { a + b }
)";
  CHECK_THROWS_WITH_AS(infer_types(parse_program(src)), doctest::Contains("(1, 128)"), Error);
}

TEST_CASE("unbound variables are reported") {
  const char* src = "def @main(a: Tensor[(1, 4)]) { b }";
  CHECK_THROWS_WITH_AS(infer_types(parse_program(src)), doctest::Contains("unbound variable"),
                       Error);
}

TEST_CASE("listing rnn main returns a list of (1,16) logits") {
  TypedProgram tp = infer_types(parse_program(zoo::listing1_source()));
  const FuncDef& main_fd = tp.program.functions.at("main");
  CHECK(type_equal(main_fd.ret_type, Type::list(Type::tensor(1, 16))));
  // The recursive function's parameters were inferred from the call site.
  const FuncDef& rnn = tp.program.functions.at("rnn");
  CHECK(type_equal(rnn.param_types[0], Type::list(Type::tensor(1, 256))));
  CHECK(type_equal(rnn.ret_type, Type::list(Type::tensor(1, 256))));
}

TEST_CASE("argmax produces a (1,1) tensor and scalar() extracts an int") {
  const char* src = R"(
def @main(x: Tensor[(1, 8)]) {
  let a = scalar(argmax(x));
  if (a == 0) { fill((1, 2), 1.0) } else { fill((1, 2), 0.0) }
}
)";
  TypedProgram tp = infer_types(parse_program(src));
  CHECK(type_equal(tp.program.functions.at("main").ret_type, Type::tensor(1, 2)));
}

TEST_CASE("if condition must be scalar") {
  const char* src = R"(
def @main(x: Tensor[(1, 8)]) { if (x) { x } else { x } }
)";
  CHECK_THROWS_WITH_AS(infer_types(parse_program(src)),
                       doctest::Contains("scalar"), Error);
}

TEST_CASE("all zoo models type-check") {
  for (const auto& name : zoo::model_names()) {
    for (const auto& size : {"small", "large"}) {
      zoo::ModelSpec spec = zoo::get_model(name, size);
      CHECK_NOTHROW(infer_types(parse_program(spec.source)));
    }
  }
}

// ---------------------------------------------------------------------------
// Annotation validation

TEST_CASE("treelstm concurrent annotation forms one group of two") {
  zoo::ModelSpec spec = zoo::get_model("treelstm", "small");
  TypedProgram tp = infer_types(parse_program(spec.source));
  ValidationReport rep = validate_annotations(tp);
  CHECK(rep.ok);
  int tlstm_groups = 0;
  for (const auto& g : rep.concurrent_groups) {
    if (g.function == "tlstm") {
      ++tlstm_groups;
      CHECK(g.call_site_ids.size() == 2);
    }
  }
  CHECK(tlstm_groups == 1);
}

TEST_CASE("data-dependent calls cannot be concurrent") {
  const char* src = R"(
def @f(x) { sigmoid(x) }
def @g(x) { tanh(x) }
def @main(inp: Tensor[(1, 4)]) {
  let a = @f(inp) concurrent(0);
  let b = @g(a) concurrent(0);
  b
}
)";
  TypedProgram tp = infer_types(parse_program(src));
  ValidationReport rep = validate_annotations(tp);
  CHECK(!rep.ok);
  bool found = false;
  for (const auto& e : rep.errors) found = found || e.find("data-dependent") != std::string::npos;
  CHECK(found);
}

TEST_CASE("rnn has no annotations and validates clean") {
  TypedProgram tp = infer_types(parse_program(zoo::listing1_source()));
  ValidationReport rep = validate_annotations(tp);
  CHECK(rep.ok);
  CHECK(rep.concurrent_groups.empty());
}

TEST_CASE("explicit set_phase markers are honored and must be contiguous") {
  const char* good = R"(
def @main(x: Tensor[(1, 4)], w: Tensor[(4, 4)]) {
  set_phase(0);
  let a = nn.dense(x, w);
  set_phase(1);
  let b = nn.dense(a, w);
  b
}
)";
  ValidationReport rep = validate_annotations(infer_types(parse_program(good)));
  CHECK(rep.ok);
  CHECK(rep.phase_boundaries.size() == 2);

  const char* bad = R"(
def @main(x: Tensor[(1, 4)], w: Tensor[(4, 4)]) {
  set_phase(0);
  let a = nn.dense(x, w);
  set_phase(2);
  let b = nn.dense(a, w);
  b
}
)";
  ValidationReport rep2 = validate_annotations(infer_types(parse_program(bad)));
  CHECK(!rep2.ok);
}

TEST_CASE("two phase markers on one stage are rejected at parse time") {
  const char* src = R"(
def @main(x: Tensor[(1, 4)], w: Tensor[(4, 4)]) {
  set_phase(0);
  set_phase(1);
  let a = nn.dense(x, w);
  a
}
)";
  CHECK_THROWS_WITH_AS(parse_program(src), doctest::Contains("two phase annotations"),
                       ParseError);
}
