#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gapstride {

/// Dense row-major tensor of doubles. Rank-1 tensors behave as [1, n] row
/// vectors wherever a 2-D view is needed.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v);
  static Tensor matrix(int r, int c, std::vector<double> v);

  int rows() const { return shape.empty() ? 0 : (shape.size() == 1 ? 1 : shape[0]); }
  int cols() const { return shape.empty() ? 0 : (shape.size() == 1 ? shape[0] : shape[1]); }
  std::size_t size() const { return data.size(); }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }
  bool all_finite() const;
  std::string shape_str() const;
};

// ---------------------------------------------------------------------------
// Matmul kernels. Every kernel has a serial reference path and an OpenMP path
// parallelized over output rows; each output element is accumulated in a fixed
// index order, so the two paths are bit-identical and the parallel one is safe
// to use everywhere. The dispatching entry points fall back to serial for
// small problems and inside an enclosing parallel region.
// ---------------------------------------------------------------------------
namespace kernels {

void use_parallel(bool on);
bool parallel_enabled();

// C[n,m] = A[n,k] * B[k,m]
void matmul(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_serial(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_parallel(const double* a, const double* b, double* c, int n, int k, int m);

// C[n,m] = A[n,k] * B[m,k]^T
void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_nt_serial(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_nt_parallel(const double* a, const double* b, double* c, int n, int k, int m);

// C[n,m] = A[k,n]^T * B[k,m]
void matmul_tn(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_tn_serial(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_tn_parallel(const double* a, const double* b, double* c, int n, int k, int m);

}  // namespace kernels

// Small SPD helpers for the GLS solves in the mixed-effects fit. The dense
// oracle keeps its own independent implementations.
namespace linalg {

// In-place lower Cholesky (row oriented). Returns false when the matrix is
// not numerically positive definite.
bool cholesky_lower(std::vector<double>& a, int n);

// Solves L L^T x = b given the lower factor from cholesky_lower.
std::vector<double> cholesky_solve(const std::vector<double>& chol, int n, std::vector<double> b);

// Indices of columns whose pivot collapses during pivoted Gram elimination,
// i.e. columns linearly dependent on earlier ones. Input is the n x n Gram
// matrix X^T X; rel_tol is relative to the largest diagonal entry.
std::vector<int> dependent_columns(std::vector<double> gram, int n, double rel_tol = 1e-10);

}  // namespace linalg

}  // namespace gapstride
