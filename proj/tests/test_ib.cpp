#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "pdeformer/ib.hpp"
#include "test_util.hpp"

using namespace pdeformer;
using testutil::random_tensor;

TEST_CASE("binned mi recovers label entropy for a one-hot label copy") {
  // two balanced classes, features = one-hot labels, bins = 2
  const std::size_t n = 100;
  Tensor feats({n, 2});
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = i % 2;
    feats(i, labels[i]) = 1.0;
  }
  const MIEstimate est = binned_mi(feats, labels, 2);
  CHECK(est.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(est.estimator == "binned");

  // brute-force count-table oracle on one indicator column
  double oracle = 0.0;
  {
    double joint[2][2] = {};
    for (std::size_t i = 0; i < n; ++i) joint[feats(i, 0) > 0.5 ? 1 : 0][labels[i]] += 1.0;
    for (int b = 0; b < 2; ++b) {
      for (int y = 0; y < 2; ++y) {
        const double pxy = joint[b][y] / n;
        if (pxy == 0.0) continue;
        const double pb = (joint[b][0] + joint[b][1]) / n;
        const double py = (joint[0][y] + joint[1][y]) / n;
        oracle += pxy * std::log(pxy / (pb * py));
      }
    }
  }
  CHECK(est.value == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("binned mi of independent features is near zero") {
  const std::size_t n = 2000;
  Rng rng(7);
  Tensor feats({n, 4});
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = i % 4;
    for (std::size_t j = 0; j < 4; ++j) feats(i, j) = rng.gaussian();
  }
  CHECK(binned_mi(feats, labels, 10).value < 0.05);
}

TEST_CASE("binned mi degenerate and invariance properties") {
  const std::size_t n = 60;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % 3;

  CHECK(binned_mi(Tensor::full({n, 1}, 2.5), labels, 5).value == 0.0);

  Rng rng(11);
  Tensor feats = random_tensor({n, 3}, rng);
  const double base = binned_mi(feats, labels, 5).value;

  Tensor exp_t = feats, affine_t = feats;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    exp_t[i] = std::exp(feats[i]);
    affine_t[i] = 3.0 * feats[i] + 7.0;
  }
  CHECK(binned_mi(exp_t, labels, 5).value == doctest::Approx(base).epsilon(1e-12));
  CHECK(binned_mi(affine_t, labels, 5).value == doctest::Approx(base).epsilon(1e-12));

  // bounded by log(bins) and log(classes)
  for (int trial = 0; trial < 5; ++trial) {
    Tensor f = random_tensor({n, 2}, rng);
    const double v = binned_mi(f, labels, 4).value;
    CHECK(v >= 0.0);
    CHECK(v <= std::min(std::log(4.0), std::log(3.0)) + 1e-12);
  }

  CHECK_THROWS_AS(binned_mi(feats, labels, 1), ShapeError);
  CHECK_THROWS_AS(binned_mi(feats, labels, n + 1), ShapeError);
}

TEST_CASE("variational bound closed forms") {
  // zero weights: mu = 0, logvar = 0, KL = 0
  {
    ParamMap p;
    p["vib.wm"] = Tensor({2, 2});
    p["vib.bm"] = Tensor({2});
    p["vib.wv"] = Tensor({2, 2});
    p["vib.bv"] = Tensor({2});
    DiffGraph g;
    TapedParams tp = TapedParams::bind(g, p);
    const double v =
        g.value(vib_bound(g, g.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6})), tp)).scalar_value();
    CHECK(v == 0.0);
  }

  // mean mu, logvar 0, width 1: KL = mu^2 / 2
  {
    const double mu = 1.7;
    ParamMap p;
    p["vib.wm"] = Tensor({1, 1}, {mu});
    p["vib.bm"] = Tensor({1});
    p["vib.wv"] = Tensor({1, 1});
    p["vib.bv"] = Tensor({1});
    DiffGraph g;
    TapedParams tp = TapedParams::bind(g, p);
    const double v = g.value(vib_bound(g, g.leaf(Tensor({1, 1}, {1.0})), tp)).scalar_value();
    CHECK(v == doctest::Approx(mu * mu / 2.0).epsilon(1e-12));
  }

  // gradient w.r.t. encoder params matches finite differences
  {
    Rng rng(3);
    ParamMap p;
    p["vib.wm"] = random_tensor({3, 2}, rng, -0.5, 0.5);
    p["vib.bm"] = random_tensor({2}, rng, -0.5, 0.5);
    p["vib.wv"] = random_tensor({3, 2}, rng, -0.5, 0.5);
    p["vib.bv"] = random_tensor({2}, rng, -0.5, 0.5);
    const Tensor x = random_tensor({4, 3}, rng);
    const double rel = testutil::param_grad_check(
        p, [&](DiffGraph& g, const TapedParams& tp) { return vib_bound(g, g.leaf(x), tp); });
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("ib_update closed forms") {
  TrainSettings s;
  s.lr = 0.1;

  // scalar toy: L = theta^2 at theta = 1 steps to 0.8
  {
    ParamMap p{{"theta", Tensor::scalar(1.0)}};
    GradMap g{{"theta", Tensor::scalar(2.0)}};
    OptState opt;
    ib_update(p, g, {}, s, opt);
    CHECK(p["theta"][0] == doctest::Approx(0.8).epsilon(1e-15));
  }

  // pure decay when all gradients vanish
  {
    TrainSettings sd = s;
    sd.l2 = 0.5;
    ParamMap p{{"theta", Tensor::scalar(2.0)}};
    GradMap g{{"theta", Tensor::scalar(0.0)}};
    OptState opt;
    ib_update(p, g, {}, sd, opt);
    CHECK(p["theta"][0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));
  }

  // zero task gradient, large beta: direction is the compression gradient
  {
    TrainSettings sb = s;
    sb.beta = 10.0;
    ParamMap p{{"theta", Tensor::scalar(1.0)}};
    GradMap task{{"theta", Tensor::scalar(0.0)}};
    GradMap vib{{"theta", Tensor::scalar(0.3)}};
    OptState opt;
    ib_update(p, task, vib, sb, opt);
    CHECK(p["theta"][0] == doctest::Approx(1.0 - 0.1 * 10.0 * 0.3).epsilon(1e-15));
  }

  // misaligned gradient map is rejected
  {
    ParamMap p{{"theta", Tensor::scalar(1.0)}};
    GradMap wrong{{"theta", Tensor({2}, {1.0, 2.0})}};
    OptState opt;
    CHECK_THROWS_AS(ib_update(p, wrong, {}, s, opt), ShapeError);
    GradMap missing;
    CHECK_THROWS_AS(ib_update(p, missing, {}, s, opt), ShapeError);
  }
}

TEST_CASE("ib_update with beta = lambda = 0 is plain SGD over many steps") {
  Rng rng(13);
  ParamMap p{{"w", random_tensor({3, 3}, rng)}};
  ParamMap manual = p;
  TrainSettings s;
  s.lr = 0.02;
  OptState opt;
  for (int step = 0; step < 200; ++step) {
    // pseudo-gradient stream shared by both updates
    GradMap g{{"w", random_tensor({3, 3}, rng)}};
    ib_update(p, g, {}, s, opt);
    for (std::size_t i = 0; i < 9; ++i) manual["w"][i] -= s.lr * g["w"][i];
    for (std::size_t i = 0; i < 9; ++i) CHECK(p["w"][i] == manual["w"][i]);
  }
}

TEST_CASE("adam step matches the hand formula at t = 1") {
  TrainSettings s;
  s.lr = 0.1;
  s.adam = true;
  ParamMap p{{"theta", Tensor::scalar(1.0)}};
  GradMap g{{"theta", Tensor::scalar(0.4)}};
  OptState opt;
  ib_update(p, g, {}, s, opt);
  // bias-corrected m-hat = g, v-hat = g^2 at the first step
  const double expect = 1.0 - 0.1 * 0.4 / (std::sqrt(0.4 * 0.4) + 1e-8);
  CHECK(p["theta"][0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(opt.t == 1);
}
