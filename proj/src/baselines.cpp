#include "gapstride/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gapstride/rng.hpp"

namespace gapstride {

void GrudConfig::validate() const {
  if (hidden <= 0) throw std::invalid_argument("GrudConfig: hidden must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("GrudConfig: dropout must be in [0,1)");
  if (grid_cap < 1) throw std::invalid_argument("GrudConfig: grid_cap must be >= 1");
  if (n_vars < 1) throw std::invalid_argument("GrudConfig: n_vars must be >= 1");
}

RegularGridSeries to_regular_grid(const History& history, const std::vector<double>& x_bar, const TrainStats& stats,
                                  int grid_cap) {
  if (history.triplets.empty()) throw std::invalid_argument("to_regular_grid: empty history");
  const int D = static_cast<int>(x_bar.size());

  double tau_min = 0.0;
  for (const auto& t : history.triplets) tau_min = std::min(tau_min, t.tau);
  int T = static_cast<int>(std::llround(-tau_min)) + 1;
  T = std::clamp(T, 1, grid_cap);

  RegularGridSeries s;
  s.x_bar = x_bar;
  s.grid_tau.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) s.grid_tau[static_cast<std::size_t>(t)] = static_cast<double>(t - (T - 1));
  s.x = Tensor::zeros({T, D});
  s.m = Tensor::zeros({T, D});
  s.delta = Tensor::zeros({T, D});
  s.x_last = Tensor::zeros({T, D});

  // cell assignment: nearest month; latest tau wins inside a cell
  std::vector<double> best_tau(static_cast<std::size_t>(T) * static_cast<std::size_t>(D),
                               -std::numeric_limits<double>::infinity());
  for (const auto& t : history.triplets) {
    if (t.k == vocab::kAnchor) continue;  // sentinel carries no measurement
    if (t.k < 1 || t.k > D) throw std::invalid_argument("to_regular_grid: variable id outside the grid layout");
    const int cell = static_cast<int>(std::llround(t.tau)) + (T - 1);
    if (cell < 0) continue;  // older than the capped window
    const int d = t.k - 1;
    const std::size_t idx = static_cast<std::size_t>(cell) * D + d;
    if (t.tau > best_tau[idx]) {
      best_tau[idx] = t.tau;
      s.x.at(cell, d) = stats.standardize(t.k, t.v);
      s.m.at(cell, d) = 1.0;
    }
  }

  // delta accumulates across unobserved cells; x_last carries the most
  // recent observed value, falling back to the training mean
  for (int d = 0; d < D; ++d) {
    double last_val = x_bar[static_cast<std::size_t>(d)];
    for (int t = 0; t < T; ++t) {
      if (t == 0)
        s.delta.at(t, d) = 0.0;
      else
        s.delta.at(t, d) = 1.0 + (s.m.at(t - 1, d) != 0.0 ? 0.0 : s.delta.at(t - 1, d));
      if (s.m.at(t, d) != 0.0) last_val = s.x.at(t, d);
      s.x_last.at(t, d) = last_val;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// GRU-D
// ---------------------------------------------------------------------------

GrudModel::GrudModel(const GrudConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 g(rng::mix(init_seed));
  const int D = cfg_.n_vars;
  const int H = cfg_.hidden;

  auto dense = [&](const std::string& name, int rin, int cout) {
    Tensor t = Tensor::zeros({rin, cout});
    const double sd = 1.0 / std::sqrt(static_cast<double>(rin));
    for (double& v : t.data) v = rng::gaussian(g, 0.0, sd);
    return store_.add(name, std::move(t));
  };
  auto zeros = [&](const std::string& name, int rin, int cout) { return store_.add(name, Tensor::zeros({rin, cout})); };

  w_gx_ = dense("w_gx", D, D);
  b_gx_ = zeros("b_gx", 1, D);
  w_gh_ = dense("w_gh", D, H);
  b_gh_ = zeros("b_gh", 1, H);
  w_r_ = dense("w_r", D, H);
  u_r_ = dense("u_r", H, H);
  v_r_ = dense("v_r", D, H);
  b_r_ = zeros("b_r", 1, H);
  w_q_ = dense("w_q", D, H);
  u_q_ = dense("u_q", H, H);
  v_q_ = dense("v_q", D, H);
  b_q_ = zeros("b_q", 1, H);
  w_h_ = dense("w_h", D, H);
  u_h_ = dense("u_h", H, H);
  v_h_ = dense("v_h", D, H);
  b_h_ = zeros("b_h", 1, H);
  head_w_ = zeros("head_w", H, 1);
  head_b_ = zeros("head_b", 1, 1);
}

int GrudModel::forward(ad::Tape& tape, const RegularGridSeries& series, std::mt19937_64* dropout_rng) const {
  const int T = series.steps();
  const int D = series.vars();
  if (D != cfg_.n_vars) throw std::invalid_argument("GrudModel: series variable count mismatch");

  const int xbar_node = tape.constant(Tensor::row(series.x_bar));
  int h = tape.constant(Tensor::zeros({1, cfg_.hidden}));

  auto row_const = [&](const Tensor& t, int r) {
    Tensor out = Tensor::zeros({1, D});
    for (int j = 0; j < D; ++j) out.data[static_cast<std::size_t>(j)] = t.at(r, j);
    return tape.constant(std::move(out));
  };

  for (int t = 0; t < T; ++t) {
    const int x_t = row_const(series.x, t);
    const int m_t = row_const(series.m, t);
    const int d_t = row_const(series.delta, t);
    const int xl_t = row_const(series.x_last, t);
    const int m_inv = tape.affine(m_t, -1.0, 1.0);  // 1 - m

    // gamma = exp(-max(0, W delta + b)), elementwise in (0, 1]
    const int gx = tape.exp_op(tape.scale(tape.relu_op(tape.add_rowvec(tape.matmul(d_t, tape.param(w_gx_)), tape.param(b_gx_))), -1.0));
    const int gh = tape.exp_op(tape.scale(tape.relu_op(tape.add_rowvec(tape.matmul(d_t, tape.param(w_gh_)), tape.param(b_gh_))), -1.0));

    // completed input
    const int carried = tape.add(tape.mul(gx, xl_t), tape.mul(tape.affine(gx, -1.0, 1.0), xbar_node));
    const int x_tilde = tape.add(tape.mul(m_t, x_t), tape.mul(m_inv, carried));

    const int h_decayed = tape.mul(gh, h);

    auto gate = [&](int w, int u, int v, int b, int h_in) {
      return tape.add_rowvec(
          tape.add(tape.add(tape.matmul(x_tilde, tape.param(w)), tape.matmul(h_in, tape.param(u))), tape.matmul(m_t, tape.param(v))),
          tape.param(b));
    };
    const int r_t = tape.sigmoid_op(gate(w_r_, u_r_, v_r_, b_r_, h_decayed));
    const int q_t = tape.sigmoid_op(gate(w_q_, u_q_, v_q_, b_q_, h_decayed));
    const int cand = tape.tanh_op(gate(w_h_, u_h_, v_h_, b_h_, tape.mul(r_t, h_decayed)));
    h = tape.add(tape.mul(tape.affine(q_t, -1.0, 1.0), h_decayed), tape.mul(q_t, cand));
  }

  if (dropout_rng && cfg_.dropout > 0.0) {
    Tensor mask = Tensor::zeros({1, cfg_.hidden});
    const double keep = 1.0 - cfg_.dropout;
    for (double& v : mask.data) v = rng::bernoulli(*dropout_rng, keep) ? 1.0 / keep : 0.0;
    h = tape.mul(h, tape.constant(std::move(mask)));
  }
  return tape.add(tape.matmul(h, tape.param(head_w_)), tape.param(head_b_));
}

double GrudModel::evaluate(const RegularGridSeries& series) const {
  ad::Tape tape(const_cast<ad::ParameterStore*>(&store_));
  return tape.value(forward(tape, series, nullptr)).data[0];
}

// ---------------------------------------------------------------------------
// STraTS
// ---------------------------------------------------------------------------

ModelConfig StratsConfig::as_model_config() const {
  ModelConfig mc;
  mc.d = d;
  mc.layers = layers;
  mc.heads = heads;
  mc.dropout = dropout;
  mc.attn_dropout = attn_dropout;
  mc.m_max = m_max;
  mc.gap_init_per_year = 0.0;  // unused in the standard style
  return mc;
}

StratsModel::StratsModel(const StratsConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), encoder_(cfg.as_model_config(), EncoderStyle::kStandardDirect, init_seed) {}

}  // namespace gapstride
