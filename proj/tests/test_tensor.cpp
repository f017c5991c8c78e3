#include "gapstride/tensor.hpp"

#include <random>

#include "doctest.h"
#include "gapstride/rng.hpp"

using namespace gapstride;

namespace {

Tensor random_matrix(std::mt19937_64& g, int r, int c) {
  Tensor t = Tensor::zeros({r, c});
  for (double& v : t.data) v = rng::gaussian(g, 0.0, 1.0);
  return t;
}

// plain triple loop, written independently of the kernels
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::vector<double> c(static_cast<std::size_t>(a.rows()) * b.cols(), 0.0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (int p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c[static_cast<std::size_t>(i) * b.cols() + j] = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul kernels match a naive reference") {
  std::mt19937_64 g(1);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 3 + trial, k = 4 + trial, m = 2 + trial;
    const Tensor a = random_matrix(g, n, k);
    const Tensor b = random_matrix(g, k, m);
    const std::vector<double> ref = naive_matmul(a, b);

    Tensor c = Tensor::zeros({n, m});
    kernels::matmul_serial(a.data.data(), b.data.data(), c.data.data(), n, k, m);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("parallel and serial kernels are bit-identical") {
  std::mt19937_64 g(2);
  const int n = 67, k = 45, m = 53;
  const Tensor a = random_matrix(g, n, k);
  const Tensor b = random_matrix(g, k, m);
  const Tensor bt = random_matrix(g, m, k);
  const Tensor at = random_matrix(g, k, n);

  Tensor c1 = Tensor::zeros({n, m}), c2 = Tensor::zeros({n, m});
  kernels::matmul_serial(a.data.data(), b.data.data(), c1.data.data(), n, k, m);
  kernels::matmul_parallel(a.data.data(), b.data.data(), c2.data.data(), n, k, m);
  CHECK(c1.data == c2.data);

  kernels::matmul_nt_serial(a.data.data(), bt.data.data(), c1.data.data(), n, k, m);
  kernels::matmul_nt_parallel(a.data.data(), bt.data.data(), c2.data.data(), n, k, m);
  CHECK(c1.data == c2.data);

  kernels::matmul_tn_serial(at.data.data(), b.data.data(), c1.data.data(), n, k, m);
  kernels::matmul_tn_parallel(at.data.data(), b.data.data(), c2.data.data(), n, k, m);
  CHECK(c1.data == c2.data);
}

TEST_CASE("transposed kernels agree with explicit transposition") {
  std::mt19937_64 g(3);
  const int n = 5, k = 7, m = 4;
  const Tensor a = random_matrix(g, n, k);
  const Tensor b = random_matrix(g, m, k);  // for nt
  Tensor bt = Tensor::zeros({k, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) bt.at(j, i) = b.at(i, j);

  Tensor c = Tensor::zeros({n, m});
  kernels::matmul_nt(a.data.data(), b.data.data(), c.data.data(), n, k, m);
  const std::vector<double> ref = naive_matmul(a, bt);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("cholesky solve round-trips an SPD system") {
  std::mt19937_64 g(4);
  const int n = 6;
  const Tensor b = random_matrix(g, n, n);
  // SPD: B B' + n I
  std::vector<double> spd(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = i == j ? static_cast<double>(n) : 0.0;
      for (int p = 0; p < n; ++p) s += b.at(i, p) * b.at(j, p);
      spd[static_cast<std::size_t>(i) * n + j] = s;
    }
  std::vector<double> x_true(n);
  for (int i = 0; i < n; ++i) x_true[static_cast<std::size_t>(i)] = rng::gaussian(g, 0.0, 1.0);
  std::vector<double> rhs(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) rhs[static_cast<std::size_t>(i)] += spd[static_cast<std::size_t>(i) * n + j] * x_true[static_cast<std::size_t>(j)];

  std::vector<double> chol = spd;
  REQUIRE(linalg::cholesky_lower(chol, n));
  const std::vector<double> x = linalg::cholesky_solve(chol, n, rhs);
  for (int i = 0; i < n; ++i) CHECK(x[static_cast<std::size_t>(i)] == doctest::Approx(x_true[static_cast<std::size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("dependent_columns flags an exact duplicate") {
  // X = [1, v, v] -> third column depends on the second
  const int n = 3;
  std::mt19937_64 g(5);
  std::vector<double> v(10);
  for (double& x : v) x = rng::gaussian(g, 0.0, 1.0);
  std::vector<double> gram(static_cast<std::size_t>(n) * n, 0.0);
  for (double x : v) {
    const double row[3] = {1.0, x, x};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) gram[static_cast<std::size_t>(i) * n + j] += row[i] * row[j];
  }
  const std::vector<int> dep = linalg::dependent_columns(gram, n);
  REQUIRE(dep.size() == 1);
  CHECK(dep[0] == 2);
}

TEST_CASE("cholesky rejects a non-PD matrix") {
  std::vector<double> m{1.0, 2.0, 2.0, 1.0};  // eigenvalues 3, -1
  CHECK_FALSE(linalg::cholesky_lower(m, 2));
}
