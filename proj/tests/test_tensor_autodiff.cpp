#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "embfat/finite_diff.hpp"
#include "embfat/graph.hpp"
#include "embfat/rng.hpp"
#include "embfat/tensor.hpp"
#include "oracles.hpp"

using namespace embfat;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Random tensor with every element bounded away from zero, for relu inputs.
Tensor random_tensor_no_kink(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) {
    double x = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -x : x;
  }
  return t;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(eye, b).data == std::vector<double>{5, 6, 7, 8});

  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor ones({2, 1}, {1, 1});
  CHECK(matmul(a, ones).data == std::vector<double>{3, 7});
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(42);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor got = matmul(a, b);
  Tensor want = oracles::matmul_naive(a, b);
  for (std::size_t i = 0; i < got.numel(); ++i) {
    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 2}, {1, 2, 3, 4});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random conforming triples") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({5, 4}, rng);
    Tensor c = random_tensor({4, 2}, rng);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i) {
      const double denom = std::max({std::abs(left.data[i]), std::abs(right.data[i]), 1e-9});
      CHECK(std::abs(left.data[i] - right.data[i]) / denom < 1e-9);
    }
  }
}

TEST_CASE("masked_mean_pool examples") {
  Tensor single({1, 2}, {2, 4});
  CHECK(masked_mean_pool(single, {1}).data == std::vector<double>{2, 4});

  Tensor two({2, 2}, {2, 4, 4, 8});
  CHECK(masked_mean_pool(two, {1, 1}).data == std::vector<double>{3, 6});

  Tensor masked({2, 2}, {2, 4, 9, 9});
  CHECK(masked_mean_pool(masked, {1, 0}).data == std::vector<double>{2, 4});

  CHECK_THROWS_AS(masked_mean_pool(two, {0, 0}), ShapeError);
}

TEST_CASE("softmax cross entropy examples") {
  auto sym = softmax_cross_entropy(Tensor({2}, {0, 0}), 0);
  CHECK(sym.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(sym.probs.data[0] == doctest::Approx(0.5));
  CHECK(sym.probs.data[1] == doctest::Approx(0.5));

  auto big = softmax_cross_entropy(Tensor({2}, {1000, 0}), 0);
  CHECK(big.loss < 1e-10);
  CHECK(all_finite(big.probs));

  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({2}, {0, 0}), 2), ShapeError);
}

TEST_CASE("softmax cross entropy matches log-sum-exp oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor({5}, rng, -8.0, 8.0);
    const std::size_t label = static_cast<std::size_t>(rng.below(5));
    auto got = softmax_cross_entropy(logits, label);
    const double want = oracles::xent_logsumexp(logits.data, label);
    CHECK(std::abs(got.loss - want) < 1e-10);
  }
}

TEST_CASE("softmax probability invariants at extreme magnitudes") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const double mag = trial % 2 == 0 ? 1.0 : 1e3;
    Tensor logits = random_tensor({4}, rng, -mag, mag);
    auto got = softmax_cross_entropy(logits, 0);
    double sum = 0;
    for (double p : got.probs.data) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("elementwise examples") {
  CHECK(relu(Tensor({3}, {-1, 0, 2})).data == std::vector<double>{0, 0, 2});
  Tensor x({2}, {1.5, -2.5});
  CHECK(add(x, Tensor::zeros({2})).data == x.data);
  CHECK(scale(Tensor({2}, {1, 2}), 0.5).data == std::vector<double>{0.5, 1});
  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), ShapeError);
  CHECK(tanh_t(Tensor({1}, {0})).data[0] == 0.0);
}

TEST_CASE("l2 norm examples") {
  CHECK(l2_norm(Tensor({2}, {3, 4})) == doctest::Approx(5.0));
  CHECK(l2_norm(Tensor::zeros({4})) == 0.0);
  Rng rng(3);
  Tensor t = random_tensor({10}, rng);
  CHECK(l2_norm(t) == doctest::Approx(oracles::l2_direct(t)).epsilon(1e-12));
}

TEST_CASE("backward of x*x at 3 is 6") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 1}, {3.0}));
  NodeId y = g.reshape(g.matmul(x, x), {1});
  auto grads = g.backward(y);
  CHECK(grads.at(x).data[0] == doctest::Approx(6.0));
}

TEST_CASE("disconnected leaf gets zero gradient") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 1}, {2.0}));
  NodeId unused = g.leaf(Tensor({3}, {1, 2, 3}));
  NodeId y = g.reshape(g.matmul(x, x), {1});
  auto grads = g.backward(y);
  CHECK(grads.at(unused).data == std::vector<double>{0, 0, 0});
}

TEST_CASE("non-scalar loss is rejected") {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("relu adjoint at exactly zero is zero") {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {0.0}));
  NodeId y = g.relu(x);
  auto grads = g.backward(y);
  CHECK(grads.at(x).data[0] == 0.0);
}

TEST_CASE("finite_diff_check on a quadratic is near exact") {
  auto f = [](const std::vector<Tensor>& p) {
    double s = 0;
    for (double v : p[0].data) s += v * v;
    return s;
  };
  auto grad = [](const std::vector<Tensor>& p) {
    Tensor g = p[0];
    for (double& v : g.data) v *= 2.0;
    return std::vector<Tensor>{g};
  };
  Rng rng(11);
  CHECK(finite_diff_check(f, grad, {random_tensor({6}, rng)}, 1e-5) < 1e-9);
  CHECK_THROWS_AS(finite_diff_check(f, grad, {random_tensor({2}, rng)}, 0.0),
                  ConfigError);
}

// Property: for every registered op, backward() matches central differences.
TEST_CASE("per-op gradient property over randomized seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng shape_rng(derive_seed(seed, "shapes"));
    const std::size_t m = 2 + shape_rng.below(3);
    const std::size_t k = 2 + shape_rng.below(3);
    const std::size_t n = 2 + shape_rng.below(3);

    // One scalar function per op kind, each flowing through an l2-style
    // reduction (sum of elements via matmul with a ones vector).
    auto reduce = [](Graph& g, NodeId mat, std::size_t rows, std::size_t cols) {
      NodeId ones = g.input(Tensor({cols, 1}, std::vector<double>(cols, 1.0)));
      NodeId summed = g.matmul(g.reshape(mat, {rows, cols}), ones);  // rows×1
      NodeId onesr = g.input(Tensor({1, rows}, std::vector<double>(rows, 1.0)));
      return g.reshape(g.matmul(onesr, summed), {1});
    };

    struct Case {
      const char* name;
      std::vector<std::vector<std::size_t>> shapes;
      bool no_kink;
    };
    const Case cases[] = {
        {"matmul", {{m, k}, {k, n}}, false},
        {"add", {{m, n}, {m, n}}, false},
        {"sub", {{m, n}, {m, n}}, false},
        {"scale", {{m, n}}, false},
        {"relu", {{m, n}}, true},
        {"tanh", {{m, n}}, false},
        {"pool", {{m, n}}, false},
        {"gather", {{m + 2, n}}, false},
        {"xent", {{1, n}}, false},
    };

    for (const Case& c : cases) {
      Rng rng(derive_seed(seed, c.name));
      std::vector<Tensor> params;
      for (const auto& s : c.shapes) {
        params.push_back(c.no_kink ? random_tensor_no_kink(s, rng)
                                   : random_tensor(s, rng));
      }
      std::vector<std::uint8_t> mask(m, 0);
      mask[0] = 1;
      if (m > 1) mask[m - 1] = 1;
      std::vector<std::size_t> rows = {0, m + 1, 0};
      const std::size_t label = rng.below(n);

      auto build = [&](const std::vector<Tensor>& p, Graph& g,
                       std::vector<NodeId>& leaves) {
        leaves.clear();
        for (const Tensor& t : p) leaves.push_back(g.leaf(t));
        const std::string name = c.name;
        if (name == "matmul") return reduce(g, g.matmul(leaves[0], leaves[1]), m, n);
        if (name == "add") return reduce(g, g.add(leaves[0], leaves[1]), m, n);
        if (name == "sub") return reduce(g, g.sub(leaves[0], leaves[1]), m, n);
        if (name == "scale") return reduce(g, g.scale(leaves[0], -1.75), m, n);
        if (name == "relu") return reduce(g, g.relu(leaves[0]), m, n);
        if (name == "tanh") return reduce(g, g.tanh_op(leaves[0]), m, n);
        if (name == "pool")
          return reduce(g, g.masked_mean_pool(leaves[0], mask), 1, n);
        if (name == "gather")
          return reduce(g, g.gather_rows(leaves[0], rows), rows.size(), n);
        return g.softmax_cross_entropy(g.reshape(leaves[0], {n}), label);
      };

      auto f = [&](const std::vector<Tensor>& p) {
        Graph g;
        std::vector<NodeId> leaves;
        return g.value(build(p, g, leaves)).data[0];
      };
      auto grad = [&](const std::vector<Tensor>& p) {
        Graph g;
        std::vector<NodeId> leaves;
        auto grads = g.backward(build(p, g, leaves));
        std::vector<Tensor> out;
        for (NodeId l : leaves) out.push_back(grads.at(l));
        return out;
      };
      const double err = finite_diff_check(f, grad, params, 1e-5);
      INFO("op=" << c.name << " seed=" << seed);
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("graph evaluation is deterministic bitwise") {
  auto run = [] {
    Rng rng(1234);
    Graph g;
    NodeId a = g.leaf(random_tensor({4, 3}, rng));
    NodeId b = g.leaf(random_tensor({3, 5}, rng));
    NodeId c = g.tanh_op(g.matmul(a, b));
    NodeId pooled = g.masked_mean_pool(c, {1, 0, 1, 1});
    return g.value(g.reshape(pooled, {5})).data;
  };
  CHECK(run() == run());
}
