#include "gapstride/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gapstride {

Tensor Tensor::zeros(std::vector<int> shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> v) {
  if (v.size() != static_cast<std::size_t>(r) * c) throw std::invalid_argument("Tensor::matrix: data length does not match shape");
  return Tensor({r, c}, std::move(v));
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

namespace kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Problems below this many multiply-adds are not worth a parallel region.
constexpr long kParallelFlopThreshold = 16 * 1024;

bool should_parallelize(long flops) {
#ifdef _OPENMP
  if (!g_parallel.load(std::memory_order_relaxed)) return false;
  if (omp_in_parallel()) return false;  // batch loops own the threads
  return flops >= kParallelFlopThreshold;
#else
  (void)flops;
  return false;
#endif
}
}  // namespace

void use_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

static inline void matmul_row(const double* a, const double* b, double* c, int i, int k, int m) {
  const double* arow = a + static_cast<std::size_t>(i) * k;
  double* crow = c + static_cast<std::size_t>(i) * m;
  std::fill(crow, crow + m, 0.0);
  for (int p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + static_cast<std::size_t>(p) * m;
    for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

void matmul_serial(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) matmul_row(a, b, c, i, k, m);
}

void matmul_parallel(const double* a, const double* b, double* c, int n, int k, int m) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < n; ++i) matmul_row(a, b, c, i, k, m);
}

void matmul(const double* a, const double* b, double* c, int n, int k, int m) {
  if (should_parallelize(static_cast<long>(n) * k * m))
    matmul_parallel(a, b, c, n, k, m);
  else
    matmul_serial(a, b, c, n, k, m);
}

static inline void matmul_nt_row(const double* a, const double* b, double* c, int i, int k, int m) {
  const double* arow = a + static_cast<std::size_t>(i) * k;
  double* crow = c + static_cast<std::size_t>(i) * m;
  for (int j = 0; j < m; ++j) {
    const double* brow = b + static_cast<std::size_t>(j) * k;
    double s = 0.0;
    for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
    crow[j] = s;
  }
}

void matmul_nt_serial(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) matmul_nt_row(a, b, c, i, k, m);
}

void matmul_nt_parallel(const double* a, const double* b, double* c, int n, int k, int m) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < n; ++i) matmul_nt_row(a, b, c, i, k, m);
}

void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m) {
  if (should_parallelize(static_cast<long>(n) * k * m))
    matmul_nt_parallel(a, b, c, n, k, m);
  else
    matmul_nt_serial(a, b, c, n, k, m);
}

static inline void matmul_tn_row(const double* a, const double* b, double* c, int i, int n, int k, int m) {
  double* crow = c + static_cast<std::size_t>(i) * m;
  std::fill(crow, crow + m, 0.0);
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<std::size_t>(p) * n + i];
    const double* brow = b + static_cast<std::size_t>(p) * m;
    for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

void matmul_tn_serial(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) matmul_tn_row(a, b, c, i, n, k, m);
}

void matmul_tn_parallel(const double* a, const double* b, double* c, int n, int k, int m) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < n; ++i) matmul_tn_row(a, b, c, i, n, k, m);
}

void matmul_tn(const double* a, const double* b, double* c, int n, int k, int m) {
  if (should_parallelize(static_cast<long>(n) * k * m))
    matmul_tn_parallel(a, b, c, n, k, m);
  else
    matmul_tn_serial(a, b, c, n, k, m);
}

}  // namespace kernels

namespace linalg {

bool cholesky_lower(std::vector<double>& a, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int p = 0; p < j; ++p) s -= a[static_cast<std::size_t>(i) * n + p] * a[static_cast<std::size_t>(j) * n + p];
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) return false;
        a[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
      } else {
        a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
      }
    }
    for (int j = i + 1; j < n; ++j) a[static_cast<std::size_t>(i) * n + j] = 0.0;
  }
  return true;
}

std::vector<double> cholesky_solve(const std::vector<double>& chol, int n, std::vector<double> b) {
  // forward: L z = b
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int p = 0; p < i; ++p) s -= chol[static_cast<std::size_t>(i) * n + p] * b[p];
    b[i] = s / chol[static_cast<std::size_t>(i) * n + i];
  }
  // backward: L^T x = z
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int p = i + 1; p < n; ++p) s -= chol[static_cast<std::size_t>(p) * n + i] * b[p];
    b[i] = s / chol[static_cast<std::size_t>(i) * n + i];
  }
  return b;
}

std::vector<int> dependent_columns(std::vector<double> gram, int n, double rel_tol) {
  double max_diag = 0.0;
  for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, gram[static_cast<std::size_t>(i) * n + i]);
  const double tol = rel_tol * std::max(max_diag, 1.0);

  std::vector<int> dependent;
  std::vector<double> l(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = gram[static_cast<std::size_t>(i) * n + i];
    for (int p = 0; p < i; ++p) s -= l[static_cast<std::size_t>(i) * n + p] * l[static_cast<std::size_t>(i) * n + p];
    if (s <= tol) {
      dependent.push_back(i);
      continue;  // dropped column: its l row stays zero and stops influencing later pivots
    }
    const double di = std::sqrt(s);
    l[static_cast<std::size_t>(i) * n + i] = di;
    for (int j = i + 1; j < n; ++j) {
      double t = gram[static_cast<std::size_t>(j) * n + i];
      for (int p = 0; p < i; ++p) t -= l[static_cast<std::size_t>(j) * n + p] * l[static_cast<std::size_t>(i) * n + p];
      l[static_cast<std::size_t>(j) * n + i] = t / di;
    }
  }
  return dependent;
}

}  // namespace linalg

}  // namespace gapstride
