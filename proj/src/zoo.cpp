#include "mbatch/zoo.hpp"

#include <functional>
#include <random>
#include <sstream>

namespace mbatch {
namespace zoo {

namespace {

std::string substitute(std::string text, int hidden, int classes) {
  auto replace_all = [&](const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
      text.replace(pos, from.size(), to);
      pos += to.size();
    }
  };
  replace_all("{2H}", std::to_string(2 * hidden));
  replace_all("{H}", std::to_string(hidden));
  replace_all("{C}", std::to_string(classes));
  return text;
}

const char* kRnn = R"(
def @rnn(inps, state, bias, i_wt, h_wt) {
  match (inps) {
    Nil => Nil,
    Cons(inp, tail) => {
      let inp_linear = bias + nn.dense(inp, i_wt);
      let new_state = sigmoid(inp_linear + nn.dense(state, h_wt));
      Cons(new_state, @rnn(tail, new_state, bias, i_wt, h_wt))
    }
  }
}

def @main(rnn_bias: Tensor[(1, {H})], rnn_i_wt: Tensor[({H}, {H})],
          rnn_h_wt: Tensor[({H}, {H})], rnn_init: Tensor[(1, {H})],
          c_wt: Tensor[({H}, {C})], cbias: Tensor[(1, {C})],
          inps: List[Tensor[(1, {H})]]) {
  let rnn_res = @rnn(inps, rnn_init, rnn_bias, rnn_i_wt, rnn_h_wt);
  @map(fn(p) { relu(cbias + nn.dense(p, c_wt)) }, rnn_res)
}
)";

const char* kBirnn = R"(
def @reverse_list(xs, acc) {
  match (xs) {
    Nil => acc,
    Cons(h, t) => @reverse_list(t, Cons(h, acc))
  }
}

def @rnn(inps, state, bias, i_wt, h_wt) {
  match (inps) {
    Nil => Nil,
    Cons(inp, tail) => {
      let inp_linear = bias + nn.dense(inp, i_wt);
      let new_state = sigmoid(inp_linear + nn.dense(state, h_wt));
      Cons(new_state, @rnn(tail, new_state, bias, i_wt, h_wt))
    }
  }
}

def @main(f_rnn_bias: Tensor[(1, {H})], f_rnn_i_wt: Tensor[({H}, {H})],
          f_rnn_h_wt: Tensor[({H}, {H})], f_rnn_init: Tensor[(1, {H})],
          b_rnn_bias: Tensor[(1, {H})], b_rnn_i_wt: Tensor[({H}, {H})],
          b_rnn_h_wt: Tensor[({H}, {H})], b_rnn_init: Tensor[(1, {H})],
          inps_list: List[Tensor[(1, {H})]]) {
  let rinps_list = @reverse_list(inps_list, Nil);
  let forward_res = @rnn(inps_list, f_rnn_init, f_rnn_bias, f_rnn_i_wt, f_rnn_h_wt);
  let backward_res = @rnn(rinps_list, b_rnn_init, b_rnn_bias, b_rnn_i_wt, b_rnn_h_wt);
  @map2(fn(ft, bt) { concat(ft, bt) }, forward_res, @reverse_list(backward_res, Nil))
}
)";

const char* kTreeLstm = R"(
data Tree {
  Leaf(Tensor[(1, {H})]),
  Node(Tree, Tree)
}

def @tcell(xt, lh, lc, rh, rc, i_wt, fl_wt, fr_wt, u_wt) -> (Tensor[(1, {H})], Tensor[(1, {H})]) {
  let hcat = concat(lh, rh);
  let i = sigmoid(nn.dense(hcat, i_wt) + xt);
  let fl = sigmoid(nn.dense(hcat, fl_wt) + xt);
  let fr = sigmoid(nn.dense(hcat, fr_wt) + xt);
  let u = tanh(nn.dense(hcat, u_wt) + xt);
  let c = (i * u) + ((fl * lc) + (fr * rc));
  (tanh(c), c)
}

def @tlstm(t, x_wt, x_bias, xn, i_wt, fl_wt, fr_wt, u_wt, hz, cz) -> (Tensor[(1, {H})], Tensor[(1, {H})]) {
  match (t) {
    Leaf(x) => {
      let xt = x_bias + nn.dense(x, x_wt);
      @tcell(xt, hz, cz, hz, cz, i_wt, fl_wt, fr_wt, u_wt)
    },
    Node(l, r) => {
      let lres = @tlstm(l, x_wt, x_bias, xn, i_wt, fl_wt, fr_wt, u_wt, hz, cz) concurrent(0);
      let rres = @tlstm(r, x_wt, x_bias, xn, i_wt, fl_wt, fr_wt, u_wt, hz, cz) concurrent(0);
      @tcell(xn, lres.0, lres.1, rres.0, rres.1, i_wt, fl_wt, fr_wt, u_wt)
    }
  }
}

def @main(x_wt: Tensor[({H}, {H})], x_bias: Tensor[(1, {H})], xn: Tensor[(1, {H})],
          i_wt: Tensor[({2H}, {H})], fl_wt: Tensor[({2H}, {H})],
          fr_wt: Tensor[({2H}, {H})], u_wt: Tensor[({2H}, {H})],
          hz: Tensor[(1, {H})], cz: Tensor[(1, {H})],
          c_wt: Tensor[({H}, {C})], cbias: Tensor[(1, {C})], t: Tree) {
  let res = @tlstm(t, x_wt, x_bias, xn, i_wt, fl_wt, fr_wt, u_wt, hz, cz);
  relu(cbias + nn.dense(res.0, c_wt))
}
)";

const char* kMvRnn = R"(
data Tree {
  Leaf(Tensor[(1, {H})], Tensor[({H}, {H})]),
  Node(Tree, Tree)
}

def @mv(t, v_wt, vbias) -> (Tensor[(1, {H})], Tensor[({H}, {H})]) {
  match (t) {
    Leaf(v, m) => (v, m),
    Node(l, r) => {
      let lres = @mv(l, v_wt, vbias) concurrent(0);
      let rres = @mv(r, v_wt, vbias) concurrent(0);
      let lv_rm = nn.dense(lres.0, rres.1);
      let rv_lm = nn.dense(rres.0, lres.1);
      let v = tanh(vbias + nn.dense(concat(lv_rm, rv_lm), v_wt));
      (v, lres.1 + rres.1)
    }
  }
}

def @main(v_wt: Tensor[({2H}, {H})], vbias: Tensor[(1, {H})],
          c_wt: Tensor[({H}, {C})], cbias: Tensor[(1, {C})], t: Tree) {
  let res = @mv(t, v_wt, vbias);
  relu(cbias + nn.dense(res.0, c_wt))
}
)";

const char* kNestedRnn = R"(
def @inner(s, n, ibias, i_wt) {
  if (n <= 0) { s } else {
    @inner(sigmoid(ibias + nn.dense(s, i_wt)), n - 1, ibias, i_wt)
  }
}

def @outer(xs, h, zb, z_wt, hb, h_wt, rb, r_wt, n_wt, ibias, i_wt) {
  match (xs) {
    Nil => h,
    Cons(x, t) => {
      let cat = concat(x, h);
      let z = sigmoid(zb + nn.dense(cat, z_wt));
      let hc = tanh(hb + nn.dense(cat, h_wt));
      let zr = sigmoid(rb + nn.dense(cat, r_wt));
      let hmix = (z * hc) + (zr * h);
      let n = scalar(argmax(nn.dense(hmix, n_wt)));
      let hi = @inner(hmix, n + 25, ibias, i_wt);
      @outer(t, hi, zb, z_wt, hb, h_wt, rb, r_wt, n_wt, ibias, i_wt)
    }
  }
}

def @main(zb: Tensor[(1, {H})], z_wt: Tensor[({2H}, {H})], hb: Tensor[(1, {H})],
          h_wt: Tensor[({2H}, {H})], rb: Tensor[(1, {H})], r_wt: Tensor[({2H}, {H})],
          n_wt: Tensor[({H}, 11)], ibias: Tensor[(1, {H})], i_wt: Tensor[({H}, {H})],
          outer_init: Tensor[(1, {H})], xs: List[Tensor[(1, {H})]]) {
  @outer(xs, outer_init, zb, z_wt, hb, h_wt, rb, r_wt, n_wt, ibias, i_wt)
}
)";

const char* kDrnn = R"(
def @append(a, b) {
  match (a) {
    Nil => b,
    Cons(h, t) => Cons(h, @append(t, b))
  }
}

def @gen(h, fuel, obias, o_wt, d_wt, lbias, l_wt, rbias, r_wt) {
  let o = tanh(obias + nn.dense(h, o_wt));
  if (fuel <= 0) { Cons(o, Nil) } else {
    let d = scalar(argmax(nn.dense(o, d_wt)));
    if (d == 0) { Cons(o, Nil) } else {
      let lh = tanh(lbias + nn.dense(o, l_wt));
      let rh = tanh(rbias + nn.dense(o, r_wt));
      let lt = @gen(lh, fuel - 1, obias, o_wt, d_wt, lbias, l_wt, rbias, r_wt) concurrent(0);
      let rt = @gen(rh, fuel - 1, obias, o_wt, d_wt, lbias, l_wt, rbias, r_wt) concurrent(0);
      Cons(o, @append(lt, rt))
    }
  }
}

def @main(obias: Tensor[(1, {H})], o_wt: Tensor[({H}, {H})], d_wt: Tensor[({H}, 2)],
          lbias: Tensor[(1, {H})], l_wt: Tensor[({H}, {H})], rbias: Tensor[(1, {H})],
          r_wt: Tensor[({H}, {H})], root_bias: Tensor[(1, {H})], root_wt: Tensor[({H}, {H})],
          input x: Tensor[(1, {H})], fuel: int) {
  @gen(tanh(root_bias + nn.dense(x, root_wt)), fuel,
       obias, o_wt, d_wt, lbias, l_wt, rbias, r_wt)
}
)";

const char* kStackRnn = R"(
def @srnn(toks, h, hbias, s_wt, a_wt, ebias, e_wt, pbias, p_wt, rbias, r_wt, obias, o_wt) {
  match (toks) {
    Nil => h,
    Cons(x, rest) => {
      let h2 = sigmoid(hbias + nn.dense(concat(x, h), s_wt));
      let a = scalar(argmax(nn.dense(h2, a_wt)));
      let hn = if (a == 0) {
        let emb = tanh(ebias + nn.dense(h2, e_wt));
        let psh = relu(pbias + nn.dense(h2, p_wt));
        (emb, psh)
      } else {
        let red = tanh(rbias + nn.dense(h2, r_wt));
        (red, red)
      };
      let hcomb = sigmoid(obias + nn.dense(concat(hn.0, hn.1), o_wt));
      @srnn(rest, hcomb, hbias, s_wt, a_wt, ebias, e_wt, pbias, p_wt, rbias, r_wt, obias, o_wt)
    }
  }
}

def @main(hbias: Tensor[(1, {H})], s_wt: Tensor[({2H}, {H})], a_wt: Tensor[({H}, 2)],
          ebias: Tensor[(1, {H})], e_wt: Tensor[({H}, {H})], pbias: Tensor[(1, {H})],
          p_wt: Tensor[({H}, {H})], rbias: Tensor[(1, {H})], r_wt: Tensor[({H}, {H})],
          obias: Tensor[(1, {H})], o_wt: Tensor[({2H}, {H})], init: Tensor[(1, {H})],
          c_wt: Tensor[({H}, {C})], cbias: Tensor[(1, {C})],
          toks: List[Tensor[(1, {H})]]) {
  let res = @srnn(toks, init, hbias, s_wt, a_wt, ebias, e_wt, pbias, p_wt, rbias, r_wt,
                  obias, o_wt);
  relu(cbias + nn.dense(res, c_wt))
}
)";

const char* kFig5 = R"(
def @common(v, b_wt, bbias) {
  sigmoid(bbias + nn.dense(v, b_wt))
}

def @extra(v, a_wt, abias) {
  relu(abias + nn.dense(v, a_wt))
}

def @main(a_wt: Tensor[({H}, {H})], abias: Tensor[(1, {H})], b_wt: Tensor[({H}, {H})],
          bbias: Tensor[(1, {H})], input x: Tensor[(1, {H})], sel: int) {
  let r = if (sel == 0) {
    @common(x, b_wt, bbias)
  } else {
    @common(@extra(x, a_wt, abias), b_wt, bbias)
  };
  @common(r, b_wt, bbias)
}
)";

const char* kListing1 = R"(
def @rnn(inps, state, bias, i_wt, h_wt) {
  match (inps) {
    Nil => Nil,
    Cons(inp, tail) => {
      let inp_linear = bias + nn.dense(inp, i_wt);
      let new_state = sigmoid(inp_linear + nn.dense(state, h_wt));
      Cons(new_state, @rnn(tail, new_state, bias, i_wt, h_wt))
    }
  }
}

def @main(rnn_bias: Tensor[(1, 256)], rnn_i_wt: Tensor[(256, 256)],
          rnn_h_wt: Tensor[(256, 256)], rnn_init: Tensor[(1, 256)],
          c_wt: Tensor[(256, 16)], cbias: Tensor[(1, 16)],
          inps: List[Tensor[(1, 256)]]) {
  let rnn_res = @rnn(inps, rnn_init, rnn_bias, rnn_i_wt, rnn_h_wt);
  @map(fn(p) { relu(cbias + nn.dense(p, c_wt)) }, rnn_res)
}
)";

std::vector<float> random_tensor(std::mt19937& rng, int n) {
  std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
  std::vector<float> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

HostValue random_tensor_value(std::mt19937& rng, backend::Shape s) {
  return HostValue::tensor(s, random_tensor(rng, s.size()));
}

// Full binary tree with `leaves` leaves (2*leaves-1 nodes total).
HostValue random_tree(std::mt19937& rng, int leaves,
                      const std::function<HostValue(std::mt19937&)>& leaf_fn) {
  if (leaves == 1) return leaf_fn(rng);
  std::uniform_int_distribution<int> split(1, leaves - 1);
  int left = split(rng);
  HostValue l = random_tree(rng, left, leaf_fn);
  HostValue r = random_tree(rng, leaves - left, leaf_fn);
  return HostValue::adt("Node", {std::move(l), std::move(r)});
}

}  // namespace

ModelSpec get_model(const std::string& name, const std::string& size) {
  MBATCH_CHECK(size == "small" || size == "large", "model size must be small or large");
  int hidden = size == "small" ? 32 : 64;
  const char* src = nullptr;
  if (name == "rnn") src = kRnn;
  else if (name == "birnn") src = kBirnn;
  else if (name == "treelstm") src = kTreeLstm;
  else if (name == "mvrnn") src = kMvRnn;
  else if (name == "nestedrnn") src = kNestedRnn;
  else if (name == "drnn") src = kDrnn;
  else if (name == "stackrnn") src = kStackRnn;
  else if (name == "fig5") src = kFig5;
  else throw Error("unknown model '" + name + "'");
  ModelSpec spec;
  spec.name = name;
  spec.hidden = hidden;
  spec.source = substitute(src, hidden, 8);
  return spec;
}

std::vector<std::string> model_names() {
  return {"rnn", "birnn", "treelstm", "mvrnn", "nestedrnn", "drnn", "stackrnn"};
}

std::string listing1_source() { return kListing1; }
std::string birnn_source(int hidden) { return substitute(kBirnn, hidden, 8); }

ParamEnv make_params(const ModelSpec& spec, const ir::Program& program, unsigned seed) {
  std::mt19937 rng(seed * 7919u + 17u);
  ParamEnv env;
  for (const auto& decl : program.params) {
    if (decl.is_instance_input) continue;
    MBATCH_CHECK(decl.type && decl.type->is_tensor(), "model parameters must be tensors");
    env[decl.name] = random_tensor_value(rng, decl.type->shape);
  }
  return env;
}

std::vector<InstanceInput> make_inputs(const ModelSpec& spec, const ir::Program& program,
                                       unsigned seed, int batch) {
  std::vector<InstanceInput> out;
  for (int i = 0; i < batch; ++i) {
    std::mt19937 rng(seed * 104729u + 31u * i + 7u);
    InstanceInput inst;
    for (const auto& decl : program.params) {
      if (!decl.is_instance_input) continue;
      const auto& t = decl.type;
      switch (t->kind) {
        case ir::Type::Kind::kList: {
          std::uniform_int_distribution<int> len_dist(4, 12);
          int len = len_dist(rng);
          std::vector<HostValue> items;
          for (int k = 0; k < len; ++k) items.push_back(random_tensor_value(rng, t->elem->shape));
          inst[decl.name] = HostValue::list(std::move(items));
          break;
        }
        case ir::Type::Kind::kAdt: {
          const ir::DataDef& dd = program.datatypes.at(t->adt_name);
          const ir::DataCtor* leaf_ctor = nullptr;
          for (const auto& c : dd.ctors)
            if (c.name == "Leaf") leaf_ctor = &c;
          MBATCH_CHECK(leaf_ctor, "tree inputs need a Leaf constructor");
          std::uniform_int_distribution<int> leaves_dist(4, 16);  // 7..31 nodes
          int leaves = leaves_dist(rng);
          auto leaf_fn = [&](std::mt19937& r) {
            std::vector<HostValue> fields;
            for (const auto& ft : leaf_ctor->fields)
              fields.push_back(random_tensor_value(r, ft->shape));
            return HostValue::adt("Leaf", std::move(fields));
          };
          inst[decl.name] = random_tree(rng, leaves, leaf_fn);
          break;
        }
        case ir::Type::Kind::kTensor:
          inst[decl.name] = random_tensor_value(rng, t->shape);
          break;
        case ir::Type::Kind::kScalarInt: {
          if (decl.name == "fuel") {
            std::uniform_int_distribution<int> fuel_dist(3, 4);
            inst[decl.name] = HostValue::scalar(fuel_dist(rng));
          } else if (decl.name == "sel") {
            inst[decl.name] = HostValue::scalar(i % 2);
          } else {
            std::uniform_int_distribution<int> d(0, 7);
            inst[decl.name] = HostValue::scalar(d(rng));
          }
          break;
        }
        default:
          throw Error("unsupported instance input type for " + decl.name);
      }
    }
    out.push_back(std::move(inst));
  }
  (void)spec;
  return out;
}

}  // namespace zoo
}  // namespace mbatch
