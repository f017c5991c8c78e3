#include "gapstride/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace gapstride::ad {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

int ParameterStore::add(std::string name, Tensor init) {
  if (by_name_.count(name)) throw TapeError("parameter already registered: " + name);
  if (!init.all_finite()) throw TapeError("parameter init not finite: " + name);
  Parameter p;
  p.name = std::move(name);
  p.grad = Tensor::zeros(init.shape);
  p.value = std::move(init);
  const int id = static_cast<int>(params_.size());
  by_name_[p.name] = id;
  params_.push_back(std::move(p));
  return id;
}

int ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

std::size_t ParameterStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

std::vector<double> ParameterStore::values_flat() const {
  std::vector<double> flat;
  flat.reserve(total_scalars());
  for (const auto& p : params_) flat.insert(flat.end(), p.value.data.begin(), p.value.data.end());
  return flat;
}

void ParameterStore::set_values_flat(const std::vector<double>& flat) {
  if (flat.size() != total_scalars()) throw TapeError("set_values_flat: length mismatch");
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy(flat.begin() + off, flat.begin() + off + p.value.size(), p.value.data.begin());
    off += p.value.size();
  }
}

std::vector<double> ParameterStore::grads_flat() const {
  std::vector<double> flat;
  flat.reserve(total_scalars());
  for (const auto& p : params_) flat.insert(flat.end(), p.grad.data.begin(), p.grad.data.end());
  return flat;
}

void ParameterStore::add_to_grads_flat(const std::vector<double>& flat, double scale) {
  if (flat.size() != total_scalars()) throw TapeError("add_to_grads_flat: length mismatch");
  std::size_t off = 0;
  for (auto& p : params_) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad.data[i] += scale * flat[off + i];
    off += p.grad.size();
  }
}

// ---------------------------------------------------------------------------
// AdamOptimizer
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (lr <= 0.0) throw std::invalid_argument("AdamOptimizer: learning rate must be > 0");
}

void AdamOptimizer::step(ParameterStore& store) {
  const std::size_t n = store.total_scalars();
  if (m_.empty()) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  if (m_.size() != n) throw TapeError("AdamOptimizer: parameter count changed between steps");

  std::vector<double> g = store.grads_flat();
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) {
      const double s = clip_norm_ / norm;
      for (double& v : g) v *= s;
    }
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  std::vector<double> vals = store.values_flat();
  for (std::size_t i = 0; i < n; ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    vals[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
  store.set_values_flat(vals);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParam: return "param";
    case Op::kMatMul: return "matmul";
    case Op::kMatMulNT: return "matmul_nt";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAddRowVec: return "add_rowvec";
    case Op::kScale: return "scale";
    case Op::kAffine: return "affine";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kSoftplus: return "softplus";
    case Op::kAbsDiff: return "abs_diff";
    case Op::kSquare: return "square";
    case Op::kMeanAll: return "mean";
    case Op::kSumAll: return "sum";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kGatherRows: return "gather_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kTranspose: return "transpose";
  }
  return "?";
}

void Tape::check_finite(const Tensor& t, Op op) const {
  if (!t.all_finite()) throw TapeError(std::string("non-finite output in primitive '") + op_name(op) + "'");
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Tensor t) {
  Node n;
  n.op = Op::kConstant;
  n.val = std::move(t);
  n.needs_grad = false;
  return push(std::move(n));
}

int Tape::param(int param_id) {
  auto it = param_nodes_.find(param_id);
  if (it != param_nodes_.end()) return it->second;
  if (!store_) throw TapeError("param: tape has no parameter store");
  Node n;
  n.op = Op::kParam;
  n.param_id = param_id;
  n.val = store_->at(param_id).value;
  n.needs_grad = true;
  check_finite(n.val, Op::kParam);
  const int id = push(std::move(n));
  param_nodes_[param_id] = id;
  return id;
}

static void shape_mismatch(Op op, const Tensor& a, const Tensor& b) {
  throw TapeError(std::string("shape mismatch in '") + op_name(op) + "': " + a.shape_str() + " vs " + b.shape_str());
}

int Tape::matmul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.cols() != tb.rows()) shape_mismatch(Op::kMatMul, ta, tb);
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(b);
  n.val = Tensor::zeros({ta.rows(), tb.cols()});
  kernels::matmul(ta.data.data(), tb.data.data(), n.val.data.data(), ta.rows(), ta.cols(), tb.cols());
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.cols() != tb.cols()) shape_mismatch(Op::kMatMulNT, ta, tb);
  Node n;
  n.op = Op::kMatMulNT;
  n.a = a;
  n.b = b;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(b);
  n.val = Tensor::zeros({ta.rows(), tb.rows()});
  kernels::matmul_nt(ta.data.data(), tb.data.data(), n.val.data.data(), ta.rows(), ta.cols(), tb.rows());
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) shape_mismatch(Op::kAdd, ta, tb);
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(b);
  n.val = ta;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] += tb.data[i];
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) shape_mismatch(Op::kSub, ta, tb);
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(b);
  n.val = ta;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] -= tb.data[i];
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) shape_mismatch(Op::kMul, ta, tb);
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(b);
  n.val = ta;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] *= tb.data[i];
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::add_rowvec(int a, int bias) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(bias);
  if (tb.rows() != 1 || tb.cols() != ta.cols()) shape_mismatch(Op::kAddRowVec, ta, tb);
  Node n;
  n.op = Op::kAddRowVec;
  n.a = a;
  n.b = bias;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(bias);
  n.val = ta;
  const int r = ta.rows(), c = ta.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n.val.data[static_cast<std::size_t>(i) * c + j] += tb.data[j];
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::scale(int a, double c) { return affine(a, c, 0.0); }

int Tape::affine(int a, double mul, double shift) {
  Node n;
  n.op = Op::kAffine;
  n.a = a;
  n.x0 = mul;
  n.x1 = shift;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = mul * v + shift;
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::scalar_mul(int scalar, int a) {
  const Tensor& ts = value(scalar);
  if (ts.size() != 1) throw TapeError("scalar_mul: first operand must be a scalar node");
  Node n;
  n.op = Op::kScalarMul;
  n.a = scalar;
  n.b = a;
  n.needs_grad = node_needs_grad(scalar) || node_needs_grad(a);
  n.val = value(a);
  const double s = ts.data[0];
  for (double& v : n.val.data) v *= s;
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::tanh_op(int a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = std::tanh(v);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::sigmoid_op(int a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = stable_sigmoid(v);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::relu_op(int a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = v > 0.0 ? v : 0.0;
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::exp_op(int a) {
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = std::exp(v);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::softplus_op(int a) {
  Node n;
  n.op = Op::kSoftplus;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = stable_softplus(v);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::absdiff(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) shape_mismatch(Op::kAbsDiff, ta, tb);
  Node n;
  n.op = Op::kAbsDiff;
  n.a = a;
  n.b = b;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(b);
  n.val = ta;
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] = std::fabs(ta.data[i] - tb.data[i]);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::square(int a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = value(a);
  for (double& v : n.val.data) v = v * v;
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::mean_all(int a) {
  const Tensor& ta = value(a);
  if (ta.size() == 0) throw TapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : ta.data) s += v;
  Node n;
  n.op = Op::kMeanAll;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = Tensor::scalar(s / static_cast<double>(ta.size()));
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::sum_all(int a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (double v : ta.data) s += v;
  Node n;
  n.op = Op::kSumAll;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  n.val = Tensor::scalar(s);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::softmax_rows(int a, int additive_mask) {
  const Tensor& ta = value(a);
  const int r = ta.rows(), c = ta.cols();
  const Tensor* mask = additive_mask >= 0 ? &value(additive_mask) : nullptr;
  if (mask) {
    const bool row_bcast = mask->rows() == 1 && mask->cols() == c;
    const bool full = mask->rows() == r && mask->cols() == c;
    if (!row_bcast && !full) shape_mismatch(Op::kSoftmaxRows, ta, *mask);
  }
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = a;
  n.b = additive_mask;
  n.needs_grad = node_needs_grad(a);
  n.val = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) {
      double s = ta.at(i, j);
      if (mask) s += mask->rows() == 1 ? mask->at(0, j) : mask->at(i, j);
      n.val.at(i, j) = s;
      mx = std::max(mx, s);
    }
    if (!std::isfinite(mx)) throw TapeError("softmax_rows: all entries of a row are masked");
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(n.val.at(i, j) - mx);  // exp(-inf) == 0 exactly for masked slots
      n.val.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < c; ++j) n.val.at(i, j) /= denom;
  }
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::layer_norm(int a, int gamma, int beta, double eps) {
  const Tensor& ta = value(a);
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  const int r = ta.rows(), c = ta.cols();
  if (tg.rows() != 1 || tg.cols() != c) shape_mismatch(Op::kLayerNorm, ta, tg);
  if (tb.rows() != 1 || tb.cols() != c) shape_mismatch(Op::kLayerNorm, ta, tb);
  Node n;
  n.op = Op::kLayerNorm;
  n.a = a;
  n.b = gamma;
  n.c = beta;
  n.x0 = eps;
  n.needs_grad = node_needs_grad(a) || node_needs_grad(gamma) || node_needs_grad(beta);
  n.val = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += ta.at(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = ta.at(i, j) - mu;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) n.val.at(i, j) = tg.data[j] * ((ta.at(i, j) - mu) * inv) + tb.data[j];
  }
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::gather_rows(int table, std::vector<int> row_ids) {
  const Tensor& tt = value(table);
  const int c = tt.cols();
  Node n;
  n.op = Op::kGatherRows;
  n.a = table;
  n.needs_grad = node_needs_grad(table);
  n.val = Tensor::zeros({static_cast<int>(row_ids.size()), c});
  for (std::size_t j = 0; j < row_ids.size(); ++j) {
    const int rid = row_ids[j];
    if (rid < 0 || rid >= tt.rows()) throw TapeError("gather_rows: row index out of range");
    std::copy(tt.data.begin() + static_cast<std::size_t>(rid) * c, tt.data.begin() + static_cast<std::size_t>(rid + 1) * c,
              n.val.data.begin() + j * c);
  }
  n.many = std::move(row_ids);
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
  if (parts.empty()) throw TapeError("concat_cols: no inputs");
  const int r = value(parts[0]).rows();
  int total = 0;
  bool needs = false;
  for (int p : parts) {
    if (value(p).rows() != r) shape_mismatch(Op::kConcatCols, value(parts[0]), value(p));
    total += value(p).cols();
    needs = needs || node_needs_grad(p);
  }
  Node n;
  n.op = Op::kConcatCols;
  n.many = parts;
  n.needs_grad = needs;
  n.val = Tensor::zeros({r, total});
  int off = 0;
  for (int p : parts) {
    const Tensor& tp = value(p);
    for (int i = 0; i < r; ++i)
      std::copy(tp.data.begin() + static_cast<std::size_t>(i) * tp.cols(), tp.data.begin() + static_cast<std::size_t>(i + 1) * tp.cols(),
                n.val.data.begin() + static_cast<std::size_t>(i) * total + off);
    off += tp.cols();
  }
  check_finite(n.val, n.op);
  return push(std::move(n));
}

int Tape::slice_cols(int a, int c0, int c1) {
  const Tensor& ta = value(a);
  if (c0 < 0 || c1 > ta.cols() || c0 >= c1) throw TapeError("slice_cols: bad range");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.many = {c0, c1};
  n.needs_grad = node_needs_grad(a);
  const int r = ta.rows(), w = c1 - c0;
  n.val = Tensor::zeros({r, w});
  for (int i = 0; i < r; ++i)
    std::copy(ta.data.begin() + static_cast<std::size_t>(i) * ta.cols() + c0, ta.data.begin() + static_cast<std::size_t>(i) * ta.cols() + c1,
              n.val.data.begin() + static_cast<std::size_t>(i) * w);
  return push(std::move(n));
}

int Tape::slice_rows(int a, int r0, int r1) {
  const Tensor& ta = value(a);
  if (r0 < 0 || r1 > ta.rows() || r0 >= r1) throw TapeError("slice_rows: bad range");
  Node n;
  n.op = Op::kSliceRows;
  n.a = a;
  n.many = {r0, r1};
  n.needs_grad = node_needs_grad(a);
  const int c = ta.cols();
  n.val = Tensor::zeros({r1 - r0, c});
  std::copy(ta.data.begin() + static_cast<std::size_t>(r0) * c, ta.data.begin() + static_cast<std::size_t>(r1) * c, n.val.data.begin());
  return push(std::move(n));
}

int Tape::transpose(int a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kTranspose;
  n.a = a;
  n.needs_grad = node_needs_grad(a);
  const int r = ta.rows(), c = ta.cols();
  n.val = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n.val.at(j, i) = ta.at(i, j);
  return push(std::move(n));
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grd.data.empty()) n.grd = Tensor::zeros({n.val.rows(), n.val.cols()});
  return n.grd;
}

const Tensor& Tape::grad(int id) const {
  if (!grads_ready_) throw TapeError("grad: backward has not run");
  return nodes_.at(static_cast<std::size_t>(id)).grd;
}

void Tape::backward(int loss_id) {
  if (grads_ready_) throw TapeError("backward: tape already differentiated");
  const Tensor& loss = value(loss_id);
  if (loss.size() != 1) throw TapeError("backward: loss node is not scalar, shape " + loss.shape_str());
  grad_buf(loss_id).data[0] = 1.0;
  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grd.data.empty()) continue;
    backward_node(id);
  }
  grads_ready_ = true;
}

void Tape::backward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = n.grd;

  auto add_into = [&](int src, auto&& fn) {
    if (!node_needs_grad(src)) return;
    fn(grad_buf(src));
  };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      return;

    case Op::kMatMul: {
      const Tensor& A = value(n.a);
      const Tensor& B = value(n.b);
      const int r = A.rows(), k = A.cols(), m = B.cols();
      add_into(n.a, [&](Tensor& da) {
        std::vector<double> tmp(static_cast<std::size_t>(r) * k);
        kernels::matmul_nt(g.data.data(), B.data.data(), tmp.data(), r, m, k);
        for (std::size_t i = 0; i < tmp.size(); ++i) da.data[i] += tmp[i];
      });
      add_into(n.b, [&](Tensor& db) {
        std::vector<double> tmp(static_cast<std::size_t>(k) * m);
        kernels::matmul_tn(A.data.data(), g.data.data(), tmp.data(), k, r, m);
        for (std::size_t i = 0; i < tmp.size(); ++i) db.data[i] += tmp[i];
      });
      return;
    }

    case Op::kMatMulNT: {
      const Tensor& A = value(n.a);
      const Tensor& B = value(n.b);
      const int r = A.rows(), k = A.cols(), m = B.rows();
      add_into(n.a, [&](Tensor& da) {
        std::vector<double> tmp(static_cast<std::size_t>(r) * k);
        kernels::matmul(g.data.data(), B.data.data(), tmp.data(), r, m, k);
        for (std::size_t i = 0; i < tmp.size(); ++i) da.data[i] += tmp[i];
      });
      add_into(n.b, [&](Tensor& db) {
        std::vector<double> tmp(static_cast<std::size_t>(m) * k);
        kernels::matmul_tn(g.data.data(), A.data.data(), tmp.data(), m, r, k);
        for (std::size_t i = 0; i < tmp.size(); ++i) db.data[i] += tmp[i];
      });
      return;
    }

    case Op::kAdd:
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i];
      });
      add_into(n.b, [&](Tensor& db) {
        for (std::size_t i = 0; i < g.size(); ++i) db.data[i] += g.data[i];
      });
      return;

    case Op::kSub:
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i];
      });
      add_into(n.b, [&](Tensor& db) {
        for (std::size_t i = 0; i < g.size(); ++i) db.data[i] -= g.data[i];
      });
      return;

    case Op::kMul: {
      const Tensor& A = value(n.a);
      const Tensor& B = value(n.b);
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * B.data[i];
      });
      add_into(n.b, [&](Tensor& db) {
        for (std::size_t i = 0; i < g.size(); ++i) db.data[i] += g.data[i] * A.data[i];
      });
      return;
    }

    case Op::kAddRowVec: {
      const int r = g.rows(), c = g.cols();
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i];
      });
      add_into(n.b, [&](Tensor& db) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) db.data[j] += g.data[static_cast<std::size_t>(i) * c + j];
      });
      return;
    }

    case Op::kAffine:
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += n.x0 * g.data[i];
      });
      return;

    case Op::kScalarMul: {
      const Tensor& A = value(n.b);
      const double s = value(n.a).data[0];
      add_into(n.a, [&](Tensor& ds) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g.data[i] * A.data[i];
        ds.data[0] += acc;
      });
      add_into(n.b, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += s * g.data[i];
      });
      return;
    }

    case Op::kTanh:
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * (1.0 - n.val.data[i] * n.val.data[i]);
      });
      return;

    case Op::kSigmoid:
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * n.val.data[i] * (1.0 - n.val.data[i]);
      });
      return;

    case Op::kRelu: {
      const Tensor& A = value(n.a);
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += A.data[i] > 0.0 ? g.data[i] : 0.0;
      });
      return;
    }

    case Op::kExp:
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * n.val.data[i];
      });
      return;

    case Op::kSoftplus: {
      const Tensor& A = value(n.a);
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * stable_sigmoid(A.data[i]);
      });
      return;
    }

    case Op::kAbsDiff: {
      const Tensor& A = value(n.a);
      const Tensor& B = value(n.b);
      auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * sign(A.data[i] - B.data[i]);
      });
      add_into(n.b, [&](Tensor& db) {
        for (std::size_t i = 0; i < g.size(); ++i) db.data[i] -= g.data[i] * sign(A.data[i] - B.data[i]);
      });
      return;
    }

    case Op::kSquare: {
      const Tensor& A = value(n.a);
      add_into(n.a, [&](Tensor& da) {
        for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += 2.0 * A.data[i] * g.data[i];
      });
      return;
    }

    case Op::kMeanAll: {
      const double gs = g.data[0] / static_cast<double>(value(n.a).size());
      add_into(n.a, [&](Tensor& da) {
        for (double& v : da.data) v += gs;
      });
      return;
    }

    case Op::kSumAll: {
      const double gs = g.data[0];
      add_into(n.a, [&](Tensor& da) {
        for (double& v : da.data) v += gs;
      });
      return;
    }

    case Op::kSoftmaxRows: {
      const int r = n.val.rows(), c = n.val.cols();
      add_into(n.a, [&](Tensor& da) {
        for (int i = 0; i < r; ++i) {
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += g.at(i, j) * n.val.at(i, j);
          for (int j = 0; j < c; ++j) da.at(i, j) += n.val.at(i, j) * (g.at(i, j) - dot);
        }
      });
      return;  // the additive mask is constant by contract
    }

    case Op::kLayerNorm: {
      const Tensor& A = value(n.a);
      const Tensor& G = value(n.b);
      const int r = A.rows(), c = A.cols();
      const double eps = n.x0;
      std::vector<double> xhat(static_cast<std::size_t>(c));
      for (int i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += A.at(i, j);
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
          const double d = A.at(i, j) - mu;
          var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) xhat[static_cast<std::size_t>(j)] = (A.at(i, j) - mu) * inv;

        add_into(n.b, [&](Tensor& dg) {
          for (int j = 0; j < c; ++j) dg.data[j] += g.at(i, j) * xhat[static_cast<std::size_t>(j)];
        });
        add_into(n.c, [&](Tensor& db) {
          for (int j = 0; j < c; ++j) db.data[j] += g.at(i, j);
        });
        add_into(n.a, [&](Tensor& da) {
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < c; ++j) {
            const double dy = g.at(i, j) * G.data[j];
            m1 += dy;
            m2 += dy * xhat[static_cast<std::size_t>(j)];
          }
          m1 /= c;
          m2 /= c;
          for (int j = 0; j < c; ++j) {
            const double dy = g.at(i, j) * G.data[j];
            da.at(i, j) += inv * (dy - m1 - xhat[static_cast<std::size_t>(j)] * m2);
          }
        });
      }
      return;
    }

    case Op::kGatherRows: {
      const int c = n.val.cols();
      add_into(n.a, [&](Tensor& dt) {
        for (std::size_t j = 0; j < n.many.size(); ++j) {
          const int rid = n.many[j];
          for (int p = 0; p < c; ++p) dt.data[static_cast<std::size_t>(rid) * c + p] += g.data[j * c + p];
        }
      });
      return;
    }

    case Op::kConcatCols: {
      const int r = n.val.rows(), total = n.val.cols();
      int off = 0;
      for (int p : n.many) {
        const Tensor& tp = value(p);
        const int w = tp.cols();
        add_into(p, [&](Tensor& dp) {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j) dp.at(i, j) += g.data[static_cast<std::size_t>(i) * total + off + j];
        });
        off += w;
      }
      return;
    }

    case Op::kSliceCols: {
      const int c0 = n.many[0];
      const int r = n.val.rows(), w = n.val.cols();
      add_into(n.a, [&](Tensor& da) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < w; ++j) da.at(i, c0 + j) += g.at(i, j);
      });
      return;
    }

    case Op::kSliceRows: {
      const int r0 = n.many[0];
      const int r = n.val.rows(), c = n.val.cols();
      add_into(n.a, [&](Tensor& da) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) da.at(r0 + i, j) += g.at(i, j);
      });
      return;
    }

    case Op::kTranspose: {
      const int r = n.val.rows(), c = n.val.cols();
      add_into(n.a, [&](Tensor& da) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) da.at(j, i) += g.at(i, j);
      });
      return;
    }
  }
}

void Tape::add_param_grads_to_store(double scale) {
  if (!grads_ready_) throw TapeError("add_param_grads_to_store: backward has not run");
  if (!store_) throw TapeError("add_param_grads_to_store: no parameter store");
  for (const auto& [pid, nid] : param_nodes_) {
    const Tensor& g = nodes_[static_cast<std::size_t>(nid)].grd;
    if (g.data.empty()) continue;
    Tensor& dst = store_->at(pid).grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += scale * g.data[i];
  }
}

void Tape::export_param_grads(std::vector<double>& flat, double scale) const {
  if (!grads_ready_) throw TapeError("export_param_grads: backward has not run");
  if (!store_) throw TapeError("export_param_grads: no parameter store");
  if (flat.size() != store_->total_scalars()) throw TapeError("export_param_grads: buffer size mismatch");
  std::size_t off = 0;
  for (int pid = 0; pid < store_->count(); ++pid) {
    const std::size_t len = store_->at(pid).value.size();
    auto it = param_nodes_.find(pid);
    if (it != param_nodes_.end()) {
      const Tensor& g = nodes_[static_cast<std::size_t>(it->second)].grd;
      if (!g.data.empty())
        for (std::size_t i = 0; i < len; ++i) flat[off + i] += scale * g.data[i];
    }
    off += len;
  }
}

// ---------------------------------------------------------------------------
// Checkpoint payload
// ---------------------------------------------------------------------------

std::string params_to_json(const ParameterStore& store) {
  nlohmann::json j;
  j["format_version"] = 1;
  nlohmann::json tensors = nlohmann::json::array();
  for (int i = 0; i < store.count(); ++i) {
    const Parameter& p = store.at(i);
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape}, {"data", p.value.data}});
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

void params_from_json(ParameterStore& store, const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw TapeError("checkpoint: unsupported format_version");
  for (const auto& t : j.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    Tensor val(t.at("shape").get<std::vector<int>>(), t.at("data").get<std::vector<double>>());
    if (val.data.size() != static_cast<std::size_t>(val.rows()) * val.cols())
      throw TapeError("checkpoint: tensor data does not match shape for " + name);
    const int id = store.find(name);
    if (id < 0) {
      store.add(name, std::move(val));
    } else {
      Parameter& p = store.at(id);
      if (!p.value.same_shape(val)) throw TapeError("checkpoint: shape mismatch for " + name);
      p.value = std::move(val);
    }
  }
}

}  // namespace gapstride::ad
