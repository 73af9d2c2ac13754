#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "pepnet/gradcheck.hpp"
#include "pepnet/graph.hpp"
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

}  // namespace

TEST_CASE("matmul values") {
  Graph g;
  NodeId eye = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  NodeId m = g.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  NodeId prod = g.matmul(eye, m);
  CHECK(bitwise_equal(g.value(prod), Tensor({2, 2}, {3, 4, 5, 6})));

  NodeId a = g.constant(Tensor({1, 2}, {1, 2}));
  NodeId b = g.constant(Tensor({2, 1}, {3, 4}));
  CHECK(g.value(g.matmul(a, b))[0] == 11.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Graph g;
  NodeId a = g.constant(Tensor({2, 3}));
  NodeId b = g.constant(Tensor({2, 3}));
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  Parameter a("a", random_tensor({3, 4}, rng));
  Parameter b("b", random_tensor({4, 2}, rng));
  std::vector<Parameter*> params{&a, &b};
  const double err = finite_diff_check(
      [&](Graph& g) { return g.sum(g.matmul(g.param(a), g.param(b))); }, params);
  CHECK(err < 1e-6);
}

TEST_CASE("relu forward and gradient") {
  Graph g;
  NodeId x = g.constant(Tensor({3}, {-1, 0, 2}));
  CHECK(bitwise_equal(g.value(g.relu(x)), Tensor({3}, {0, 0, 2})));

  {
    Graph g2;
    NodeId neg = g2.input(Tensor({3}, {-1, -5, -0.25}));
    NodeId loss = g2.sum(g2.relu(neg));
    g2.backward(loss);
    CHECK(bitwise_equal(g2.value(loss), Tensor::scalar(0.0)));
    CHECK(bitwise_equal(g2.grad(neg), Tensor::zeros({3})));
  }

  Rng rng(11);
  Tensor v = random_tensor({6}, rng);
  for (int64_t i = 0; i < v.size(); ++i) {
    if (std::fabs(v[i]) < 1e-3) v[i] = 0.5;  // keep clear of the kink
  }
  Parameter x2("x", v);
  std::vector<Parameter*> params{&x2};
  const double err =
      finite_diff_check([&](Graph& gg) { return gg.sum(gg.relu(gg.param(x2))); }, params);
  CHECK(err < 1e-6);
}

TEST_CASE("sigmoid values, saturation, gradient") {
  Graph g;
  CHECK(g.value(g.sigmoid(g.constant(Tensor::scalar(0.0))))[0] == 0.5);
  const double sat = g.value(g.sigmoid(g.constant(Tensor::scalar(50.0))))[0];
  CHECK(sat < 1.0);
  CHECK(sat > 1.0 - 1e-15);
  const double low = g.value(g.sigmoid(g.constant(Tensor::scalar(-800.0))))[0];
  CHECK(low > 0.0);

  Rng rng(13);
  Parameter x("x", random_tensor({8}, rng, -3.0, 3.0));
  std::vector<Parameter*> params{&x};
  const double err =
      finite_diff_check([&](Graph& gg) { return gg.sum(gg.sigmoid(gg.param(x))); }, params);
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise mul") {
  Graph g;
  NodeId a = g.constant(Tensor({2}, {2, 3}));
  NodeId ones = g.constant(Tensor::full({2}, 1.0));
  CHECK(bitwise_equal(g.value(g.mul(a, ones)), Tensor({2}, {2, 3})));
  CHECK(bitwise_equal(g.value(g.mul(a, g.constant(Tensor({2}, {4, 5})))), Tensor({2}, {8, 15})));
  CHECK_THROWS_AS(g.mul(a, g.constant(Tensor({3}))), std::invalid_argument);

  Rng rng(17);
  Parameter pa("a", random_tensor({5}, rng));
  Parameter pb("b", random_tensor({5}, rng));
  std::vector<Parameter*> params{&pa, &pb};
  const double err = finite_diff_check(
      [&](Graph& gg) { return gg.sum(gg.mul(gg.param(pa), gg.param(pb))); }, params);
  CHECK(err < 1e-6);
}

TEST_CASE("concat and split round trip") {
  Graph g;
  NodeId a = g.constant(Tensor({2}, {1, 2}));
  NodeId b = g.constant(Tensor({1}, {3}));
  const NodeId parts[] = {a, b};
  NodeId c = g.concat(parts);
  CHECK(bitwise_equal(g.value(c), Tensor({3}, {1, 2, 3})));

  const NodeId single[] = {a};
  CHECK(bitwise_equal(g.value(g.concat(single)), g.value(a)));

  CHECK_THROWS_AS(g.concat(std::span<const NodeId>{}), std::invalid_argument);

  NodeId x = g.constant(Tensor({4}, {1, 2, 3, 4}));
  const int64_t w22[] = {2, 2};
  auto halves = g.split(x, w22);
  CHECK(bitwise_equal(g.value(halves[0]), Tensor({2}, {1, 2})));
  CHECK(bitwise_equal(g.value(halves[1]), Tensor({2}, {3, 4})));
  const int64_t w4[] = {4};
  CHECK(bitwise_equal(g.value(g.split(x, w4)[0]), g.value(x)));
  const int64_t bad[] = {3, 2};
  CHECK_THROWS_AS(g.split(x, bad), std::invalid_argument);

  // value and gradient round trip is exact
  Rng rng(19);
  for (int rep = 0; rep < 10; ++rep) {
    Graph gg;
    Tensor t = random_tensor({3, 7}, rng);
    NodeId in = gg.input(t);
    const int64_t widths[] = {2, 4, 1};
    auto pieces = gg.split(in, widths);
    NodeId back = gg.concat(std::span<const NodeId>(pieces.data(), pieces.size()));
    CHECK(bitwise_equal(gg.value(back), t));
    Tensor w = random_tensor({3, 7}, rng);
    NodeId loss = gg.sum(gg.mul(back, gg.constant(w)));
    gg.backward(loss);
    CHECK(bitwise_equal(gg.grad(in), w));
  }
}

TEST_CASE("stop_gradient semantics") {
  Rng rng(23);
  Tensor t = random_tensor({4}, rng);

  {
    Graph g;
    NodeId x = g.input(t);
    NodeId sg = g.stop_gradient(x);
    CHECK(bitwise_equal(g.value(sg), t));
    NodeId loss = g.sum(sg);
    g.backward(loss);
    CHECK(bitwise_equal(g.grad(x), Tensor::zeros({4})));
  }
  {
    // d/dx sum(x * stop(x)) == x, not 2x
    Graph g;
    NodeId x = g.input(t);
    NodeId loss = g.sum(g.mul(x, g.stop_gradient(x)));
    g.backward(loss);
    CHECK(bitwise_equal(g.grad(x), t));
  }
}

TEST_CASE("bce loss values and gradient") {
  Graph g;
  NodeId half = g.constant(Tensor::scalar(0.5));
  const double loss = g.value(g.bce_loss(half, Tensor::scalar(1.0)))[0];
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  NodeId exact = g.constant(Tensor({2}, {1.0 - 1e-12, 1e-12}));
  CHECK(g.value(g.bce_loss(exact, Tensor({2}, {1.0, 0.0})))[0] < 1e-10);

  CHECK_THROWS_AS(g.bce_loss(half, Tensor::scalar(0.5)), std::invalid_argument);
  CHECK_THROWS_AS(g.bce_loss(half, Tensor({2}, {1, 0})), std::invalid_argument);

  Rng rng(29);
  Parameter p("p", random_tensor({6}, rng, 0.05, 0.95));
  Tensor labels({6});
  for (int64_t i = 0; i < 6; ++i) labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  std::vector<Parameter*> params{&p};
  const double err = finite_diff_check(
      [&](Graph& gg) { return gg.bce_loss(gg.param(p), labels); }, params);
  CHECK(err < 1e-5);
}

TEST_CASE("backward basics") {
  {
    Graph g;
    NodeId x = g.input(Tensor({3}, {1, 2, 3}));
    g.backward(g.sum(x));
    CHECK(bitwise_equal(g.grad(x), Tensor::full({3}, 1.0)));
  }
  {
    // diamond: y = x + x accumulates both paths
    Graph g;
    NodeId x = g.input(Tensor({2}, {1, 1}));
    g.backward(g.sum(g.add(x, x)));
    CHECK(bitwise_equal(g.grad(x), Tensor::full({2}, 2.0)));
  }
  {
    Graph g;
    NodeId x = g.input(Tensor({2, 2}));
    CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
  }
}

TEST_CASE("add_row, repeat_cols, softmax, scale gradients") {
  Rng rng(31);
  Parameter m("m", random_tensor({3, 4}, rng));
  Parameter row("row", random_tensor({4}, rng));
  {
    std::vector<Parameter*> params{&m, &row};
    const double err = finite_diff_check(
        [&](Graph& g) { return g.sum(g.add_row(g.param(m), g.param(row))); }, params);
    CHECK(err < 1e-6);
  }
  {
    Parameter x("x", random_tensor({3, 2}, rng));
    std::vector<Parameter*> params{&x};
    Tensor w = random_tensor({3, 5}, rng);
    const double err = finite_diff_check(
        [&](Graph& g) {
          const int64_t widths[] = {3, 2};
          return g.sum(g.mul(g.repeat_cols(g.param(x), widths), g.constant(w)));
        },
        params);
    CHECK(err < 1e-6);
  }
  {
    Parameter x("x", random_tensor({4, 3}, rng));
    std::vector<Parameter*> params{&x};
    Tensor w = random_tensor({4, 3}, rng);
    const double err = finite_diff_check(
        [&](Graph& g) {
          return g.sum(g.mul(g.softmax_rows(g.param(x)), g.constant(w)));
        },
        params);
    CHECK(err < 1e-6);
    Graph g;
    NodeId probs = g.softmax_rows(g.param(x));
    for (int64_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < 3; ++c) s += g.value(probs).at(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  {
    Parameter x("x", random_tensor({5}, rng));
    std::vector<Parameter*> params{&x};
    const double err = finite_diff_check(
        [&](Graph& g) { return g.sum(g.scale(g.param(x), -2.5)); }, params);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("embedding_rows gather and scatter") {
  Rng rng(37);
  Parameter table("table", random_tensor({3, 2}, rng));
  const int32_t rows[] = {2, 0, 2, 1};
  {
    Graph g;
    NodeId out = g.embedding_rows(g.param(table), rows);
    CHECK(g.value(out).at(0, 0) == table.value.at(2, 0));
    CHECK(g.value(out).at(3, 1) == table.value.at(1, 1));
    const int32_t bad[] = {3};
    CHECK_THROWS_AS(g.embedding_rows(g.param(table), bad), std::invalid_argument);
  }
  std::vector<Parameter*> params{&table};
  Tensor w = random_tensor({4, 2}, rng);
  const double err = finite_diff_check(
      [&](Graph& g) {
        return g.sum(g.mul(g.embedding_rows(g.param(table), rows), g.constant(w)));
      },
      params);
  CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check reference points") {
  // linear function: central differences are exact
  Rng rng(41);
  Parameter x("x", random_tensor({6}, rng));
  Tensor w = random_tensor({6}, rng);
  {
    std::vector<Parameter*> params{&x};
    const double err = finite_diff_check(
        [&](Graph& g) { return g.sum(g.mul(g.param(x), g.constant(w))); }, params);
    CHECK(err < 1e-9);
  }
  // single sigmoid neuron
  Parameter wv("w", random_tensor({4, 1}, rng));
  Parameter b("b", random_tensor({1}, rng));
  Tensor input = random_tensor({1, 4}, rng);
  {
    std::vector<Parameter*> params{&wv, &b};
    const double err = finite_diff_check(
        [&](Graph& g) {
          return g.sum(g.sigmoid(g.add_row(g.matmul(g.constant(input), g.param(wv)), g.param(b))));
        },
        params);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("three-layer gated net gradients within 1e-4 over seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Parameter w1("w1", random_tensor({5, 7}, rng, -0.8, 0.8));
    Parameter b1("b1", random_tensor({7}, rng, -0.2, 0.2));
    Parameter w2("w2", random_tensor({7, 6}, rng, -0.8, 0.8));
    Parameter b2("b2", random_tensor({6}, rng, -0.2, 0.2));
    Parameter gate_w("gw", random_tensor({5, 6}, rng, -0.8, 0.8));
    Parameter w3("w3", random_tensor({6, 1}, rng, -0.8, 0.8));
    Tensor input = random_tensor({3, 5}, rng);
    Tensor labels({3, 1});
    for (int64_t i = 0; i < 3; ++i) labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;

    std::vector<Parameter*> params{&w1, &b1, &w2, &b2, &gate_w, &w3};
    const double err = finite_diff_check(
        [&](Graph& g) {
          NodeId x = g.constant(input);
          NodeId h1 = g.relu(g.add_row(g.matmul(x, g.param(w1)), g.param(b1)));
          NodeId h2 = g.relu(g.add_row(g.matmul(h1, g.param(w2)), g.param(b2)));
          NodeId gate = g.sigmoid(g.matmul(x, g.param(gate_w)));
          NodeId gated = g.mul(h2, gate);
          NodeId score = g.sigmoid(g.matmul(gated, g.param(w3)));
          return g.bce_loss(score, labels);
        },
        params);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("determinism: identical construction gives bitwise identical state") {
  auto build = [](std::vector<Tensor>& grads) {
    Rng rng(99);
    Parameter w("w", random_tensor({4, 3}, rng));
    Parameter b("b", random_tensor({3}, rng));
    Tensor input = random_tensor({2, 4}, rng);
    Tensor labels({2, 3});
    for (int64_t i = 0; i < labels.size(); ++i) labels[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    Graph g;
    NodeId out = g.sigmoid(g.add_row(g.matmul(g.constant(input), g.param(w)), g.param(b)));
    NodeId loss = g.bce_loss(out, labels);
    g.backward(loss);
    grads = {w.grad, b.grad};
    return g.value(loss)[0];
  };
  std::vector<Tensor> g1, g2;
  const double l1 = build(g1);
  const double l2 = build(g2);
  CHECK(l1 == l2);
  CHECK(bitwise_equal(g1[0], g2[0]));
  CHECK(bitwise_equal(g1[1], g2[1]));
}

TEST_CASE("non-finite values are rejected") {
  Graph g;
  NodeId big = g.constant(Tensor::scalar(1e308));
  CHECK_THROWS_AS(g.mul(big, big), std::runtime_error);
}
