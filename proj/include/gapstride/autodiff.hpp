#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gapstride/tensor.hpp"

namespace gapstride::ad {

class TapeError : public std::runtime_error {
 public:
  explicit TapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Named learnable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

class ParameterStore {
 public:
  int add(std::string name, Tensor init);
  int find(const std::string& name) const;  // -1 when absent
  Parameter& at(int id) { return params_.at(static_cast<std::size_t>(id)); }
  const Parameter& at(int id) const { return params_.at(static_cast<std::size_t>(id)); }
  int count() const { return static_cast<int>(params_.size()); }
  std::size_t total_scalars() const;
  void zero_grad();

  // Flat views in parameter-id order, used by the optimizer, the per-sample
  // gradient buffers, and the finite-difference oracle.
  std::vector<double> values_flat() const;
  void set_values_flat(const std::vector<double>& flat);
  std::vector<double> grads_flat() const;
  void add_to_grads_flat(const std::vector<double>& flat, double scale);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> by_name_;
};

/// Adam with bias correction and optional global-norm gradient clipping.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void set_clip_norm(double c) { clip_norm_ = c; }  // <= 0 disables
  void step(ParameterStore& store);
  int t() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_norm_ = 0.0;
  int t_ = 0;
  std::vector<double> m_, v_;
};

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kMatMul,
  kMatMulNT,
  kAdd,
  kSub,
  kMul,
  kAddRowVec,
  kScale,
  kAffine,
  kScalarMul,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kSoftplus,
  kAbsDiff,
  kSquare,
  kMeanAll,
  kSumAll,
  kSoftmaxRows,
  kLayerNorm,
  kGatherRows,
  kConcatCols,
  kSliceCols,
  kSliceRows,
  kTranspose,
};

const char* op_name(Op op);

/// Reverse-mode tape. Single-threaded by construction; run one tape per
/// sample and merge exported gradients in sample order for deterministic
/// batch gradients.
class Tape {
 public:
  explicit Tape(ParameterStore* store = nullptr) : store_(store) {}

  int constant(Tensor t);
  int param(int param_id);

  int matmul(int a, int b);
  int matmul_nt(int a, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int add_rowvec(int a, int bias);
  int scale(int a, double c);
  int affine(int a, double mul, double shift);
  int scalar_mul(int scalar, int a);
  int tanh_op(int a);
  int sigmoid_op(int a);
  int relu_op(int a);
  int exp_op(int a);
  int softplus_op(int a);
  int absdiff(int a, int b);
  int square(int a);
  int mean_all(int a);
  int sum_all(int a);
  // Additive mask (0 = keep, -inf = drop) is applied inside; mask may be a
  // [1, cols] row broadcast over rows, or match a's shape. Pass -1 for none.
  int softmax_rows(int a, int additive_mask);
  int layer_norm(int a, int gamma, int beta, double eps = 1e-5);
  int gather_rows(int table, std::vector<int> row_ids);
  int concat_cols(const std::vector<int>& parts);
  int slice_cols(int a, int c0, int c1);
  int slice_rows(int a, int r0, int r1);
  int transpose(int a);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).val; }
  const Tensor& grad(int id) const;
  int node_count() const { return static_cast<int>(nodes_.size()); }

  void backward(int loss_id);

  // Gradient hand-off after backward: either straight into the store or into
  // a flat buffer (parameter-id order) for deterministic batch reduction.
  void add_param_grads_to_store(double scale = 1.0);
  void export_param_grads(std::vector<double>& flat, double scale = 1.0) const;

 private:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double x0 = 0.0, x1 = 0.0;
    std::vector<int> many;  // gather indices / concat inputs / slice bounds
    int param_id = -1;
    bool needs_grad = false;
    Tensor val;
    Tensor grd;
  };

  int push(Node n);
  bool node_needs_grad(int id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Tensor& grad_buf(int id);
  void check_finite(const Tensor& t, Op op) const;
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::unordered_map<int, int> param_nodes_;
  ParameterStore* store_;
  bool grads_ready_ = false;
};

// Versioned named-tensor checkpoint payload (JSON text).
std::string params_to_json(const ParameterStore& store);
void params_from_json(ParameterStore& store, const std::string& json_text);

}  // namespace gapstride::ad
