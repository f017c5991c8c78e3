#include "gapstride/autodiff.hpp"

#include <cmath>
#include <random>

#include "doctest.h"
#include "gapstride/rng.hpp"

using namespace gapstride;
using namespace gapstride::ad;

namespace {

Tensor randn(std::mt19937_64& g, int r, int c, double sd = 1.0) {
  Tensor t = Tensor::zeros({r, c});
  for (double& v : t.data) v = rng::gaussian(g, 0.0, sd);
  return t;
}

}  // namespace

TEST_CASE("softmax of identical entries is uniform") {
  Tape tape;
  const int a = tape.constant(Tensor::row({0.0, 0.0, 0.0}));
  const int s = tape.softmax_rows(a, -1);
  for (int j = 0; j < 3; ++j) CHECK(tape.value(s).data[static_cast<std::size_t>(j)] == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax of (0, -1) matches the hand value") {
  Tape tape;
  const int s = tape.softmax_rows(tape.constant(Tensor::row({0.0, -1.0})), -1);
  CHECK(tape.value(s).data[0] == doctest::Approx(0.73105857863).epsilon(1e-10));
  CHECK(tape.value(s).data[1] == doctest::Approx(0.26894142137).epsilon(1e-10));
}

TEST_CASE("softplus(0) = ln 2") {
  Tape tape;
  const int s = tape.softplus_op(tape.constant(Tensor::scalar(0.0)));
  CHECK(tape.value(s).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + static_cast<int>(rng::below(g, 7));
    Tape tape;
    Tensor mask = Tensor::zeros({1, m});
    int n_masked = static_cast<int>(rng::below(g, static_cast<std::uint64_t>(m)));  // < m, at least one valid
    for (int j = 0; j < n_masked; ++j) mask.data[static_cast<std::size_t>(m - 1 - j)] = -std::numeric_limits<double>::infinity();
    const int a = tape.constant(randn(g, 3, m, 2.0));
    const int s = tape.softmax_rows(a, tape.constant(mask));
    for (int i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (int j = 0; j < m; ++j) sum += tape.value(s).at(i, j);
      CHECK(std::fabs(sum - 1.0) < 1e-12);
      for (int j = 0; j < n_masked; ++j) CHECK(tape.value(s).at(i, m - 1 - j) == 0.0);
    }
  }
}

TEST_CASE("softmax with a fully masked row is rejected") {
  Tape tape;
  Tensor mask = Tensor::full({1, 2}, -std::numeric_limits<double>::infinity());
  const int a = tape.constant(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(tape.softmax_rows(a, tape.constant(mask)), TapeError);
}

TEST_CASE("scalar loss gradient: d(x^2)/dx = 2x") {
  ParameterStore store;
  const int x = store.add("x", Tensor::scalar(3.0));
  Tape tape(&store);
  const int loss = tape.square(tape.param(x));
  tape.backward(loss);
  tape.add_param_grads_to_store();
  CHECK(store.at(x).grad.data[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("gradient of an unused parameter is exactly zero") {
  ParameterStore store;
  const int x = store.add("x", Tensor::scalar(2.0));
  const int unused = store.add("unused", Tensor::row({1.0, 2.0}));
  Tape tape(&store);
  (void)tape.param(unused);
  const int loss = tape.square(tape.param(x));
  tape.backward(loss);
  tape.add_param_grads_to_store();
  CHECK(store.at(unused).grad.data[0] == 0.0);
  CHECK(store.at(unused).grad.data[1] == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  ParameterStore store;
  const int x = store.add("x", Tensor::row({1.0, 2.0}));
  Tape tape(&store);
  const int y = tape.square(tape.param(x));
  CHECK_THROWS_AS(tape.backward(y), TapeError);
}

TEST_CASE("shape mismatch names both shapes") {
  Tape tape;
  const int a = tape.constant(Tensor::zeros({2, 3}));
  const int b = tape.constant(Tensor::zeros({3, 3}));
  try {
    tape.add(a, b);
    FAIL("expected TapeError");
  } catch (const TapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x3]") != std::string::npos);
  }
}

TEST_CASE("composite graph gradients match central finite differences") {
  std::mt19937_64 g(11);
  ParameterStore store;
  const int w1 = store.add("w1", randn(g, 4, 5, 0.5));
  const int b1 = store.add("b1", randn(g, 1, 5, 0.2));
  const int w2 = store.add("w2", randn(g, 5, 3, 0.5));
  const int gamma = store.add("gamma", Tensor::full({1, 3}, 1.0));
  const int beta = store.add("beta", Tensor::zeros({1, 3}));
  const int eta = store.add("eta", Tensor::scalar(-1.2));
  const Tensor input = randn(g, 6, 4);
  const Tensor gapm = [&] {
    Tensor t = Tensor::zeros({6, 3});
    for (double& v : t.data) v = std::fabs(rng::gaussian(g, 0.0, 2.0));
    return t;
  }();

  auto build = [&](Tape& tape) {
    const int x = tape.constant(input);
    const int h = tape.tanh_op(tape.add_rowvec(tape.matmul(x, tape.param(w1)), tape.param(b1)));
    const int z = tape.layer_norm(tape.matmul(h, tape.param(w2)), tape.param(gamma), tape.param(beta));
    const int lam = tape.softplus_op(tape.param(eta));
    const int pen = tape.scalar_mul(lam, tape.constant(gapm));
    const int s = tape.softmax_rows(tape.sub(z, pen), -1);
    const int mixed = tape.mul(tape.sigmoid_op(z), tape.relu_op(tape.exp_op(tape.scale(s, 0.5))));
    return tape.mean_all(tape.square(mixed));
  };

  Tape tape(&store);
  tape.backward(build(tape));
  std::vector<double> analytic(store.total_scalars(), 0.0);
  tape.export_param_grads(analytic, 1.0);

  const std::vector<double> base = store.values_flat();
  const double h = 1e-5;
  double max_rel = 0.0;
  std::vector<double> work = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    work[i] = base[i] + h;
    store.set_values_flat(work);
    Tape tp(&store);
    const double fp = tp.value(build(tp)).data[0];
    work[i] = base[i] - h;
    store.set_values_flat(work);
    Tape tm(&store);
    const double fm = tm.value(build(tm)).data[0];
    work[i] = base[i];
    const double fd = (fp - fm) / (2.0 * h);
    max_rel = std::max(max_rel, std::fabs(fd - analytic[i]) / std::max({1.0, std::fabs(fd), std::fabs(analytic[i])}));
  }
  store.set_values_flat(base);
  CHECK(max_rel < 1e-6);
}

TEST_CASE("identical tape runs produce bit-identical gradients") {
  std::mt19937_64 g(13);
  ParameterStore store;
  const int w = store.add("w", randn(g, 3, 3));
  const Tensor x = randn(g, 2, 3);
  auto grads = [&]() {
    Tape tape(&store);
    const int z = tape.matmul(tape.constant(x), tape.param(w));
    tape.backward(tape.mean_all(tape.square(tape.tanh_op(z))));
    std::vector<double> out(store.total_scalars(), 0.0);
    tape.export_param_grads(out, 1.0);
    return out;
  };
  CHECK(grads() == grads());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParameterStore store;
  const int x = store.add("x", Tensor::row({1.0, -2.0}));
  AdamOptimizer adam(1e-3);
  store.zero_grad();
  adam.step(store);
  CHECK(store.at(x).value.data[0] == 1.0);
  CHECK(store.at(x).value.data[1] == -2.0);
}

TEST_CASE("adam: first bias-corrected step has magnitude ~lr") {
  ParameterStore store;
  const int x = store.add("x", Tensor::scalar(0.5));
  AdamOptimizer adam(1e-3);
  store.at(x).grad.data[0] = 1.0;
  adam.step(store);
  const double delta = 0.5 - store.at(x).value.data[0];
  CHECK(std::fabs(delta - 1e-3) < 1e-6);
}

TEST_CASE("adam: constant gradient step magnitude approaches lr") {
  ParameterStore store;
  const int x = store.add("x", Tensor::scalar(0.0));
  AdamOptimizer adam(1e-3);
  double prev = 0.0;
  double last_step = 0.0;
  for (int t = 0; t < 400; ++t) {
    store.zero_grad();
    store.at(x).grad.data[0] = 2.5;
    adam.step(store);
    last_step = prev - store.at(x).value.data[0];
    prev = store.at(x).value.data[0];
  }
  CHECK(std::fabs(std::fabs(last_step) - 1e-3) < 1e-5);
}

TEST_CASE("adam rejects a non-positive learning rate") { CHECK_THROWS_AS(AdamOptimizer(0.0), std::invalid_argument); }

TEST_CASE("checkpoint payload round-trips") {
  std::mt19937_64 g(17);
  ParameterStore store;
  store.add("a", randn(g, 2, 3));
  store.add("b", randn(g, 1, 4));
  const std::string payload = params_to_json(store);

  ParameterStore fresh;
  params_from_json(fresh, payload);
  REQUIRE(fresh.count() == 2);
  CHECK(fresh.at(0).name == "a");
  CHECK(fresh.at(0).value.data == store.at(0).value.data);
  CHECK(fresh.at(1).value.data == store.at(1).value.data);
}

TEST_CASE("non-finite op output is rejected naming the primitive") {
  Tape tape;
  const int big = tape.constant(Tensor::scalar(1e308));
  try {
    tape.exp_op(big);
    FAIL("expected TapeError");
  } catch (const TapeError& e) {
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
}
