#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"

using namespace pdeformer;
using testutil::grad_check;
using testutil::random_tensor;

TEST_CASE("tensor rejects non-finite construction") {
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {INFINITY}), NumericError);
  CHECK_THROWS_AS(Tensor({2}, {1.0}), ShapeError);  // size mismatch
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng s1 = Rng::derive(7, "alpha"), s2 = Rng::derive(7, "beta");
  CHECK(s1.next_u64() != s2.next_u64());
  Rng g1 = Rng::derive(7, "alpha"), g2 = Rng::derive(7, "alpha");
  for (int i = 0; i < 10; ++i) CHECK(g1.gaussian() == g2.gaussian());
}

TEST_CASE("matmul basics") {
  const Tensor m({2, 2}, {1, 2, 3, 4});
  const Tensor id = Tensor::identity(2);
  const Tensor r1 = matmul(id, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r1[i] == m[i]);

  const Tensor ones({2, 1}, {1, 1});
  const Tensor r2 = matmul(m, ones);
  CHECK(r2[0] == 3.0);
  CHECK(r2[1] == 7.0);

  CHECK_THROWS_AS(matmul(m, Tensor({3, 2})), ShapeError);
  try {
    matmul(m, Tensor({3, 2}));
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x2") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
}

TEST_CASE("matmul is bit-identical to the triple-loop oracle up to 8x8x8") {
  Rng rng(11);
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t k = 1; k <= 8; ++k) {
      for (std::size_t n = 1; n <= 8; ++n) {
        const Tensor a = random_tensor({m, k}, rng);
        const Tensor b = random_tensor({k, n}, rng);
        const Tensor got = matmul(a, b);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a(i, t) * b(t, j);
            CHECK(got(i, j) == acc);
          }
        }
      }
    }
  }
}

TEST_CASE("softmax rows") {
  DiffGraph g;
  const NodeId u = g.softmax_rows(g.leaf(Tensor({1, 3}, {0, 0, 0})));
  for (std::size_t j = 0; j < 3; ++j) CHECK(g.value(u)[j] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  const NodeId v = g.softmax_rows(g.leaf(Tensor({1, 2}, {0.0, std::log(2.0)})));
  CHECK(g.value(v)[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(g.value(v)[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  const NodeId w = g.softmax_rows(g.leaf(Tensor({1, 2}, {1000.0, 1000.0})));
  CHECK(g.value(w)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.value(w)[1] == doctest::Approx(0.5).epsilon(1e-15));

  // rows sum to 1 and the map is shift-invariant
  Rng rng(3);
  const Tensor x = random_tensor({4, 5}, rng, -3.0, 3.0);
  Tensor shifted = x;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) shifted(i, j) += 7.25;
  const Tensor sx = g.value(g.softmax_rows(g.leaf(x)));
  const Tensor ss = g.value(g.softmax_rows(g.leaf(shifted)));
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      row += sx(i, j);
      CHECK(std::abs(sx(i, j) - ss(i, j)) < 1e-12);
    }
    CHECK(std::abs(row - 1.0) < 1e-12);
  }

  // axis-0 softmax normalizes columns
  const Tensor cx = g.value(g.softmax(g.leaf(x), 0));
  for (std::size_t j = 0; j < 5; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 4; ++i) col += cx(i, j);
    CHECK(std::abs(col - 1.0) < 1e-12);
  }
}

TEST_CASE("relu") {
  DiffGraph g;
  const Tensor r = g.value(g.relu(g.leaf(Tensor({1, 3}, {-1, 0, 2}))));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  const Tensor neg = g.value(g.relu(g.leaf(Tensor({2, 2}, {-1, -2, -3, -4}))));
  for (std::size_t i = 0; i < 4; ++i) CHECK(neg[i] == 0.0);

  Rng rng(5);
  const Tensor x = random_tensor({3, 3}, rng);
  const NodeId once = g.relu(g.leaf(x));
  const NodeId twice = g.relu(once);
  for (std::size_t i = 0; i < 9; ++i) CHECK(g.value(once)[i] == g.value(twice)[i]);
}

TEST_CASE("layer_norm") {
  DiffGraph g;
  const NodeId gain = g.leaf(Tensor::full({4}, 1.0));
  const NodeId bias = g.leaf(Tensor({4}));
  const Tensor flat = g.value(g.layer_norm(g.leaf(Tensor({1, 4}, {1, 1, 1, 1})), gain, bias));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(flat[i]) < 1e-12);

  const NodeId g2 = g.leaf(Tensor::full({2}, 1.0));
  const NodeId b2 = g.leaf(Tensor({2}));
  const Tensor pm = g.value(g.layer_norm(g.leaf(Tensor({1, 2}, {1, -1})), g2, b2));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(pm[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(pm[1] == doctest::Approx(-expect).epsilon(1e-12));

  const NodeId zero_gain = g.leaf(Tensor({2}));
  const NodeId bias_c = g.leaf(Tensor({2}, {3.0, -1.5}));
  const Tensor just_bias =
      g.value(g.layer_norm(g.leaf(Tensor({1, 2}, {0.2, 0.9})), zero_gain, bias_c));
  CHECK(just_bias[0] == 3.0);
  CHECK(just_bias[1] == -1.5);

  CHECK_THROWS_AS(g.layer_norm(g.leaf(Tensor({2, 1}, {1, 2})), g.leaf(Tensor({1}, {1.0})),
                               g.leaf(Tensor({1}))),
                  ShapeError);
}

TEST_CASE("cross_entropy") {
  DiffGraph g;
  const double ce0 = g.value(g.cross_entropy(g.leaf(Tensor({1, 2}, {0, 0})), {0})).scalar_value();
  CHECK(ce0 == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const double sure =
      g.value(g.cross_entropy(g.leaf(Tensor({1, 2}, {30, -30})), {0})).scalar_value();
  CHECK(sure < 1e-10);
  CHECK(sure >= 0.0);

  // batch mean equals the mean of single-case losses
  const double a = g.value(g.cross_entropy(g.leaf(Tensor({1, 2}, {1.0, -0.5})), {0})).scalar_value();
  const double b = g.value(g.cross_entropy(g.leaf(Tensor({1, 2}, {-0.5, 1.0})), {1})).scalar_value();
  const double both =
      g.value(g.cross_entropy(g.leaf(Tensor({2, 2}, {1.0, -0.5, -0.5, 1.0})), {0, 1}))
          .scalar_value();
  CHECK(both == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));

  CHECK_THROWS_AS(g.cross_entropy(g.leaf(Tensor({1, 2}, {0, 0})), {2}), ShapeError);
}

TEST_CASE("backward basics") {
  DiffGraph g;
  const NodeId x = g.leaf(Tensor::scalar(3.0));
  const NodeId y = g.leaf(Tensor::scalar(4.0));
  const NodeId xy = g.sum(g.mul(x, y));
  g.backward(xy);
  CHECK(g.grad(x)[0] == 4.0);
  CHECK(g.grad(y)[0] == 3.0);

  CHECK_THROWS_AS(g.backward(g.leaf(Tensor({1, 2}, {1, 2}))), ShapeError);

  // sum of softmax outputs is the constant 1, so its gradient vanishes
  DiffGraph g2;
  const NodeId z = g2.leaf(Tensor({1, 4}, {0.3, -1.2, 2.0, 0.7}));
  g2.backward(g2.sum(g2.softmax_rows(z)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(g2.grad(z)[i]) < 1e-12);

  // root gradient is all ones
  DiffGraph g3;
  const NodeId w = g3.leaf(Tensor::scalar(2.0));
  const NodeId r = g3.scale(w, 5.0);
  g3.backward(r);
  CHECK(g3.grad(r)[0] == 1.0);
}

TEST_CASE("gradient accumulates over fan-out") {
  const Tensor x({2, 2}, {0.3, -0.8, 1.1, 0.4});
  const double rel = grad_check({x}, [](DiffGraph& g, const std::vector<NodeId>& in) {
    const NodeId a = g.relu(in[0]);
    const NodeId b = g.scale(in[0], 2.0);
    return g.sum(g.mul(g.add(a, b), in[0]));  // in[0] feeds three consumers
  });
  CHECK(rel < 1e-4);
}

TEST_CASE("every primitive matches finite differences") {
  Rng rng(17);
  auto check = [&](const std::vector<Tensor>& in, auto build) {
    const double rel = grad_check(in, build);
    CHECK(rel < 1e-4);
  };

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    const Tensor c = random_tensor({3, 4}, rng);
    const Tensor row = random_tensor({4}, rng);

    check({a, b}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.matmul(in[0], in[1]), g.matmul(in[0], in[1])));
    });
    check({a, c}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.add(in[0], in[1]), g.sub(in[0], in[1])));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.shift(g.scale(in[0], -1.7), 0.3));
    });
    check({a, row}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.add_row(in[0], in[1]), in[0]));
    });
    check({a}, [&c](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.add_const(in[0], c), in[0]));
    });
    // keep relu/clamp inputs away from their kinks
    Tensor far = a;
    for (std::size_t i = 0; i < far.size(); ++i) {
      if (std::abs(far[i]) < 0.05) far[i] = 0.2;
      if (std::abs(std::abs(far[i]) - 0.5) < 0.05) far[i] *= 1.3;
    }
    check({far}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.relu(in[0]), in[0]));
    });
    check({far}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.clamp(in[0], -0.5, 0.5), in[0]));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.exp(g.scale(in[0], 0.5)), in[0]));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.softmax_rows(in[0]), in[0]));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.transpose(in[0]), g.transpose(in[0])));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      const NodeId left = g.slice_cols(in[0], 0, 2);
      const NodeId right = g.slice_cols(in[0], 2, 2);
      return g.sum(g.mul(g.concat_cols({right, left}), in[0]));
    });
    const Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
    const Tensor bias = random_tensor({4}, rng);
    check({a, gain, bias}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.layer_norm(in[0], in[1], in[2]), in[0]));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.cross_entropy(in[0], {1, 3, 0});
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.mean_rows(in[0]), g.mean_rows(in[0])));
    });
    check({a}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      return g.sum(g.mul(g.laplacian(in[0], 0.7), in[0]));
    });
    const Tensor table = random_tensor({5, 3}, rng);
    check({table}, [](DiffGraph& g, const std::vector<NodeId>& in) {
      const NodeId e = g.embed_rows(in[0], {1, 4, 1});
      return g.sum(g.mul(e, e));
    });
  }
}

TEST_CASE("spectral norm of a diagonal matrix is its largest entry") {
  const Tensor d({3, 3}, {1.5, 0, 0, 0, -0.2, 0, 0, 0, 0.7});
  CHECK(spectral_norm(d, 42) == doctest::Approx(1.5).epsilon(1e-8));
}

TEST_CASE("non-finite primitive output aborts with op kind and node id") {
  DiffGraph g;
  const NodeId big = g.leaf(Tensor::full({2, 2}, 1e200));
  try {
    g.matmul(big, big);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("node") != std::string::npos);
  }
}
