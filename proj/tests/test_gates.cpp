#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "pepnet/gates.hpp"
#include "pepnet/gradcheck.hpp"
#include "pepnet/rng.hpp"

using namespace pepnet;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

GateNUParams randomized_gate(int64_t in, int64_t hidden, int64_t out, double gamma, Rng& rng) {
  GateNUParams p("gate", in, hidden, out, gamma, rng);
  xavier_fill(p.w2.value, hidden, out, rng);
  for (int64_t i = 0; i < p.b1.value.size(); ++i) p.b1.value[i] = rng.uniform(-0.3, 0.3);
  for (int64_t i = 0; i < p.b2.value.size(); ++i) p.b2.value[i] = rng.uniform(-0.3, 0.3);
  return p;
}

}  // namespace

TEST_CASE("gate opens at gamma/2 under zero parameters") {
  Rng rng(1);
  GateNUParams p("g", 6, 4, 3, 2.0, rng);
  p.w1.value.fill(0.0);  // zero even the Xavier layer
  Graph g;
  NodeId out = gate_nu_forward(g, p, g.constant(random_tensor({5, 6}, rng)));
  for (int64_t i = 0; i < g.value(out).size(); ++i) CHECK(g.value(out)[i] == 1.0);

  GateNUParams p1("g1", 6, 4, 3, 1.0, rng);
  p1.w1.value.fill(0.0);
  NodeId out1 = gate_nu_forward(g, p1, g.constant(random_tensor({2, 6}, rng)));
  for (int64_t i = 0; i < g.value(out1).size(); ++i) CHECK(g.value(out1)[i] == 0.5);
}

TEST_CASE("gate equals hand-composed pipeline") {
  Rng rng(2);
  GateNUParams p = randomized_gate(5, 7, 4, 2.0, rng);
  Tensor x = random_tensor({3, 5}, rng);
  Graph g;
  NodeId got = gate_nu_forward(g, p, g.constant(x));
  NodeId h = g.relu(g.add_row(g.matmul(g.constant(x), g.constant(p.w1.value)),
                              g.constant(p.b1.value)));
  NodeId want = g.scale(
      g.sigmoid(g.add_row(g.matmul(h, g.constant(p.w2.value)), g.constant(p.b2.value))), 2.0);
  for (int64_t i = 0; i < g.value(got).size(); ++i) {
    CHECK(std::fabs(g.value(got)[i] - g.value(want)[i]) <= 1e-15);
  }
}

TEST_CASE("gate output strictly inside (0, gamma)") {
  Rng rng(3);
  int64_t checked = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const double gamma = rng.uniform(0.5, 4.0);
    GateNUParams p = randomized_gate(4, 6, 5, gamma, rng);
    Graph g;
    NodeId out = gate_nu_forward(g, p, g.constant(random_tensor({50, 4}, rng, -30.0, 30.0)));
    for (int64_t i = 0; i < g.value(out).size(); ++i) {
      const double v = g.value(out)[i];
      CHECK(v > 0.0);
      CHECK(v < gamma);
      ++checked;
    }
  }
  CHECK(checked >= 10000);
}

TEST_CASE("gate width mismatch is rejected") {
  Rng rng(4);
  GateNUParams p = randomized_gate(5, 7, 4, 2.0, rng);
  Graph g;
  CHECK_THROWS_AS(gate_nu_forward(g, p, g.constant(random_tensor({3, 6}, rng))),
                  std::invalid_argument);
}

TEST_CASE("monotone scaling in gamma for power-of-two factors") {
  Rng rng(5);
  GateNUParams p = randomized_gate(4, 5, 3, 2.0, rng);
  Tensor x = random_tensor({2, 4}, rng);
  Graph g;
  const Tensor base = g.value(gate_nu_forward(g, p, g.constant(x)));
  for (double c : {2.0, 4.0, 0.5}) {
    GateNUParams scaled = p;
    scaled.gamma = p.gamma * c;
    const Tensor out = g.value(gate_nu_forward(g, scaled, g.constant(x)));
    for (int64_t i = 0; i < base.size(); ++i) CHECK(out[i] == base[i] * c);
  }
}

TEST_CASE("epnet neutral gate passes the embedding through unchanged") {
  Rng rng(6);
  EpNetParams ep;
  ep.gate = GateNUParams("ep", 3 + 6, 6, 6, 2.0, rng);  // w2/b2 zero by construction
  Graph g;
  Tensor e = random_tensor({4, 6}, rng);
  const EpNetOut out = epnet_forward(g, ep, g.constant(random_tensor({4, 3}, rng)), g.input(e));
  CHECK(bitwise_equal(g.value(out.o_ep), e));
}

TEST_CASE("epnet stop gradient: gate path contributes nothing to E") {
  Rng rng(7);
  EpNetParams ep;
  ep.gate = randomized_gate(3 + 6, 6, 6, 2.0, rng);
  Tensor e = random_tensor({4, 6}, rng);
  Tensor dom = random_tensor({4, 3}, rng);
  Graph g;
  NodeId e_node = g.input(e);
  const EpNetOut out = epnet_forward(g, ep, g.constant(dom), e_node);
  g.backward(g.sum(out.delta_domain));
  CHECK(bitwise_equal(g.grad(e_node), Tensor::zeros({4, 6})));
}

TEST_CASE("epnet gradient to E is delta (x) upstream") {
  Rng rng(8);
  EpNetParams ep;
  ep.gate = randomized_gate(2 + 5, 5, 5, 2.0, rng);
  Tensor e = random_tensor({3, 5}, rng);
  Tensor dom = random_tensor({3, 2}, rng);
  Tensor w = random_tensor({3, 5}, rng);  // upstream weights: loss = sum(w (x) O_ep)

  Graph g;
  NodeId e_node = g.input(e);
  const EpNetOut out = epnet_forward(g, ep, g.constant(dom), e_node);
  g.backward(g.sum(g.mul(out.o_ep, g.constant(w))));
  const Tensor& delta = g.value(out.delta_domain);
  for (int64_t i = 0; i < e.size(); ++i) {
    CHECK(g.grad(e_node)[i] == doctest::Approx(delta[i] * w[i]).epsilon(1e-12));
  }

  // and against finite differences through a full loss
  Parameter e_param("e", e);
  std::vector<Parameter*> params{&e_param, &ep.gate.w1, &ep.gate.b1, &ep.gate.w2, &ep.gate.b2};
  const double err = finite_diff_check(
      [&](Graph& gg) {
        const EpNetOut o = epnet_forward(gg, ep, gg.constant(dom), gg.param(e_param));
        return gg.sum(gg.mul(o.o_ep, gg.constant(w)));
      },
      params);
  CHECK(err < 1e-6);
}

TEST_CASE("epnet vector-wise variant broadcasts one scalar per field") {
  Rng rng(9);
  EpNetParams ep;
  ep.vector_wise = true;
  ep.field_widths = {2, 3};
  ep.gate = randomized_gate(2 + 5, 4, 2, 2.0, rng);  // one gate scalar per field
  Tensor e = random_tensor({3, 5}, rng);
  Graph g;
  const EpNetOut out = epnet_forward(g, ep, g.constant(random_tensor({3, 2}, rng)), g.input(e));
  const Tensor& delta = g.value(out.delta_domain);
  const Tensor& o = g.value(out.o_ep);
  for (int64_t r = 0; r < 3; ++r) {
    for (int64_t c = 0; c < 2; ++c) CHECK(o.at(r, c) == delta.at(r, 0) * e.at(r, c));
    for (int64_t c = 2; c < 5; ++c) CHECK(o.at(r, c) == delta.at(r, 1) * e.at(r, c));
  }
}

TEST_CASE("ppnet neutral gates pass hidden units through unchanged") {
  Rng rng(10);
  GateNUParams gate("pp", 4 + 6, 8, 3 * 2, 2.0, rng);  // zero second layer
  Graph g;
  Tensor h1 = random_tensor({5, 3}, rng);
  Tensor h2 = random_tensor({5, 3}, rng);
  const std::vector<NodeId> hidden{g.constant(h1), g.constant(h2)};
  const auto out = ppnet_layer_forward(g, gate, g.constant(random_tensor({5, 4}, rng)),
                                       g.constant(random_tensor({5, 6}, rng)), hidden);
  REQUIRE(out.size() == 2);
  CHECK(bitwise_equal(g.value(out[0]), h1));
  CHECK(bitwise_equal(g.value(out[1]), h2));
}

TEST_CASE("ppnet single task reduces to one gated layer") {
  Rng rng(11);
  GateNUParams gate = randomized_gate(2 + 4, 5, 3, 2.0, rng);
  Graph g;
  Tensor h = random_tensor({2, 3}, rng);
  NodeId o_prior = g.constant(random_tensor({2, 2}, rng));
  NodeId o_ep = g.constant(random_tensor({2, 4}, rng));
  const auto out = ppnet_layer_forward(g, gate, o_prior, o_ep, {g.constant(h)});
  REQUIRE(out.size() == 1);
  const NodeId parts[] = {o_prior, g.stop_gradient(o_ep)};
  NodeId delta = gate_nu_forward(g, gate, g.concat(parts));
  for (int64_t i = 0; i < h.size(); ++i) {
    CHECK(g.value(out[0])[i] == g.value(delta)[i] * h[i]);
  }
}

TEST_CASE("ppnet chunk assignment: gate index 4 feeds task 2 hidden unit 1") {
  Rng rng(12);
  // T=2 towers of width 3; gate output index 4 = second chunk, offset 1
  GateNUParams gate("pp", 2 + 3, 4, 6, 2.0, rng);
  Tensor h1 = random_tensor({1, 3}, rng);
  Tensor h2 = random_tensor({1, 3}, rng);
  Tensor prior = random_tensor({1, 2}, rng);
  Tensor oep = random_tensor({1, 3}, rng);

  auto run = [&]() {
    Graph g;
    const auto out = ppnet_layer_forward(g, gate, g.constant(prior), g.constant(oep),
                                         {g.constant(h1), g.constant(h2)});
    return std::pair<Tensor, Tensor>(g.value(out[0]), g.value(out[1]));
  };
  const auto [base1, base2] = run();
  gate.b2.value[4] += 0.37;  // perturb exactly one gate output
  const auto [pert1, pert2] = run();

  CHECK(bitwise_equal(base1, pert1));  // task 1 untouched
  CHECK(base2[0] == pert2[0]);
  CHECK(base2[1] != pert2[1]);  // only unit 1 of task 2 moved
  CHECK(base2[2] == pert2[2]);
}

TEST_CASE("ppnet stop gradient on O_ep: gate input edge carries nothing") {
  Rng rng(13);
  GateNUParams gate = randomized_gate(2 + 4, 5, 6, 2.0, rng);
  Tensor prior = random_tensor({3, 2}, rng);
  Tensor oep_val = random_tensor({3, 4}, rng);
  Tensor h1 = random_tensor({3, 3}, rng);
  Tensor h2 = random_tensor({3, 3}, rng);

  Graph g;
  NodeId oep = g.input(oep_val);
  const auto out = ppnet_layer_forward(g, gate, g.constant(prior), oep,
                                       {g.constant(h1), g.constant(h2)});
  g.backward(g.sum(g.add(out[0], out[1])));
  CHECK(bitwise_equal(g.grad(oep), Tensor::zeros({3, 4})));
}

TEST_CASE("ppnet tower mismatch errors") {
  Rng rng(14);
  GateNUParams gate = randomized_gate(2 + 4, 5, 6, 2.0, rng);  // expects T*h = 6
  Graph g;
  NodeId prior = g.constant(random_tensor({1, 2}, rng));
  NodeId oep = g.constant(random_tensor({1, 4}, rng));
  // three towers of width 3 -> needs out 9, gate provides 6
  const std::vector<NodeId> three{g.constant(random_tensor({1, 3}, rng)),
                                  g.constant(random_tensor({1, 3}, rng)),
                                  g.constant(random_tensor({1, 3}, rng))};
  CHECK_THROWS_AS(ppnet_layer_forward(g, gate, prior, oep, three), std::invalid_argument);
  CHECK_THROWS_AS(ppnet_layer_forward(g, gate, prior, oep, {}), std::invalid_argument);
}

TEST_CASE("stop-gradient edges match edge-removed reference graphs bitwise") {
  // EPNet: gate fed stop_gradient(E) must produce the same gradients as a
  // graph where that edge is a detached constant.
  Rng rng(15);
  EpNetParams ep;
  ep.gate = randomized_gate(2 + 4, 5, 4, 2.0, rng);
  Tensor e = random_tensor({3, 4}, rng);
  Tensor dom = random_tensor({3, 2}, rng);
  Tensor w = random_tensor({3, 4}, rng);

  auto grads_with_stop = [&]() {
    for (Parameter* p : ep.gate.parameters()) p->zero_grad();
    Graph g;
    NodeId e_node = g.input(e);
    const EpNetOut out = epnet_forward(g, ep, g.constant(dom), e_node);
    g.backward(g.sum(g.mul(out.o_ep, g.constant(w))));
    std::vector<Tensor> grads{g.grad(e_node)};
    for (Parameter* p : ep.gate.parameters()) grads.push_back(p->grad);
    return grads;
  };
  auto grads_edge_removed = [&]() {
    for (Parameter* p : ep.gate.parameters()) p->zero_grad();
    Graph g;
    NodeId e_node = g.input(e);
    const NodeId parts[] = {g.constant(dom), g.constant(e)};  // detached copy of E
    NodeId delta = gate_nu_forward(g, ep.gate, g.concat(parts));
    NodeId o_ep = g.mul(delta, e_node);
    g.backward(g.sum(g.mul(o_ep, g.constant(w))));
    std::vector<Tensor> grads{g.grad(e_node)};
    for (Parameter* p : ep.gate.parameters()) grads.push_back(p->grad);
    return grads;
  };

  const auto a = grads_with_stop();
  const auto b = grads_edge_removed();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(a[i], b[i]));
}
