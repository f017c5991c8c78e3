#include "gapstride/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gapstride/rng.hpp"

namespace gapstride {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus_inverse(double y) { return std::log(std::expm1(y)); }
}  // namespace

void ModelConfig::validate() const {
  if (d <= 0 || layers <= 0 || heads <= 0) throw std::invalid_argument("ModelConfig: d, layers, heads must be positive");
  if (d % heads != 0) throw std::invalid_argument("ModelConfig: d must be divisible by heads");
  auto rate = [](double r, const char* what) {
    if (r < 0.0 || r >= 1.0) throw std::invalid_argument(std::string("ModelConfig: ") + what + " must be in [0,1)");
  };
  rate(dropout, "dropout");
  rate(attn_dropout, "attn_dropout");
  if (batch_size <= 0) throw std::invalid_argument("ModelConfig: batch_size must be positive");
  if (m_max < 1) throw std::invalid_argument("ModelConfig: m_max must be >= 1");
  if (gap_init_per_year < 0.0) throw std::invalid_argument("ModelConfig: gap_init_per_year must be >= 0");
}

int TokenRow::n_valid() const {
  int n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void TokenRow::append_pad(int count) {
  for (int i = 0; i < count; ++i) {
    tau.push_back(0.0);
    var_id.push_back(vocab::kAnchor);
    value.push_back(0.0);
    valid.push_back(0);
  }
}

TokenRow tokenize(const History& history, const TrainStats& stats, const ModelConfig& config) {
  std::vector<const ObservationTriplet*> kept;
  kept.reserve(history.triplets.size());
  for (const auto& t : history.triplets) kept.push_back(&t);

  if (static_cast<int>(kept.size()) > config.m_max) {
    // keep the m_max most recent tokens, preserving their relative order
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kept[a]->tau > kept[b]->tau; });
    order.resize(static_cast<std::size_t>(config.m_max));
    std::sort(order.begin(), order.end());
    std::vector<const ObservationTriplet*> trimmed;
    trimmed.reserve(order.size());
    for (std::size_t i : order) trimmed.push_back(kept[i]);
    kept = std::move(trimmed);
  }

  TokenRow row;
  if (kept.empty()) {
    row.tau.push_back(0.0);
    row.var_id.push_back(vocab::kAnchor);
    row.value.push_back(0.0);
    row.valid.push_back(1);
    return row;
  }
  for (const auto* t : kept) {
    if (t->k < 1 || t->k > config.vocab_size)
      throw std::invalid_argument("tokenize: variable id " + std::to_string(t->k) + " outside the vocabulary");
    row.tau.push_back(t->tau);
    row.var_id.push_back(t->k);
    row.value.push_back(stats.standardize(t->k, t->v));
    row.valid.push_back(1);
  }
  return row;
}

TokenBatch tokenize_batch(const std::vector<AnchorSample>& samples, const TrainStats& stats, const ModelConfig& config) {
  TokenBatch batch;
  batch.rows.reserve(samples.size());
  int longest = 0;
  for (const auto& s : samples) {
    batch.rows.push_back(tokenize(s.history, stats, config));
    longest = std::max(longest, batch.rows.back().length());
  }
  for (auto& r : batch.rows) r.append_pad(longest - r.length());
  return batch;
}

// ---------------------------------------------------------------------------
// GapTransformer
// ---------------------------------------------------------------------------

GapTransformer::GapTransformer(const ModelConfig& cfg, EncoderStyle style, std::uint64_t init_seed)
    : cfg_(cfg), style_(style) {
  cfg_.validate();
  std::mt19937_64 g(rng::mix(init_seed));
  const int d = cfg_.d;

  auto dense = [&](const std::string& name, int rin, int cout) {
    Tensor t = Tensor::zeros({rin, cout});
    const double sd = 1.0 / std::sqrt(static_cast<double>(rin));
    for (double& v : t.data) v = rng::gaussian(g, 0.0, sd);
    return store_.add(name, std::move(t));
  };
  auto zeros = [&](const std::string& name, int rin, int cout) { return store_.add(name, Tensor::zeros({rin, cout})); };
  auto ones = [&](const std::string& name, int cout) { return store_.add(name, Tensor::full({1, cout}, 1.0)); };

  time_w1_ = dense("time_w1", 1, d);
  time_b1_ = zeros("time_b1", 1, d);
  time_w2_ = dense("time_w2", d, d);
  time_b2_ = zeros("time_b2", 1, d);

  {
    Tensor emb = Tensor::zeros({cfg_.vocab_size, d});
    for (double& v : emb.data) v = rng::gaussian(g, 0.0, 0.2);
    var_embed_ = store_.add("var_embed", std::move(emb));
  }

  if (style_ == EncoderStyle::kGapResidual) {
    val_w_ = dense("value_w", 1, d);
    val_b_ = zeros("value_b", 1, d);
  } else {
    val_w1_ = dense("value_w1", 1, d);
    val_b1_ = zeros("value_b1", 1, d);
    val_w2_ = dense("value_w2", d, d);
    val_b2_ = zeros("value_b2", 1, d);
  }

  const bool gap = style_ == EncoderStyle::kGapResidual;
  const double eta_init = gap ? softplus_inverse(cfg_.gap_init_per_year / 12.0) : 0.0;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    LayerIds ids;
    ids.wq = dense(p + "wq", d, d);
    ids.wk = dense(p + "wk", d, d);
    ids.wv = dense(p + "wv", d, d);
    ids.wo = dense(p + "wo", d, d);
    ids.eta = gap ? store_.add(p + "eta", Tensor::full({1, cfg_.heads}, eta_init)) : -1;
    ids.ln1_g = ones(p + "ln1_g", d);
    ids.ln1_b = zeros(p + "ln1_b", 1, d);
    ids.ln2_g = ones(p + "ln2_g", d);
    ids.ln2_b = zeros(p + "ln2_b", 1, d);
    ids.ffn_w1 = dense(p + "ffn_w1", d, 2 * d);
    ids.ffn_b1 = zeros(p + "ffn_b1", 1, 2 * d);
    ids.ffn_w2 = dense(p + "ffn_w2", 2 * d, d);
    ids.ffn_b2 = zeros(p + "ffn_b2", 1, d);
    layers_.push_back(ids);
  }

  pool_w_ = dense("pool_w", d, d);
  pool_b_ = zeros("pool_b", 1, d);
  pool_v_ = dense("pool_v", d, 1);
  // zero residual head: the untrained model reproduces the statistical
  // reference exactly
  head_w_ = zeros("head_w", d, 1);
  head_b_ = zeros("head_b", 1, 1);
}

double GapTransformer::lambda_init_per_month() const { return cfg_.gap_init_per_year / 12.0; }

std::vector<double> GapTransformer::lambdas_per_month() const {
  std::vector<double> out;
  if (style_ != EncoderStyle::kGapResidual) return out;
  for (const auto& l : layers_) {
    const Tensor& eta = store_.at(l.eta).value;
    for (double e : eta.data) out.push_back(e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)));
  }
  return out;
}

ForwardResult GapTransformer::forward(ad::Tape& tape, const TokenRow& row, std::mt19937_64* dropout_rng) const {
  const int m = row.length();
  const int d = cfg_.d;
  const int dh = d / cfg_.heads;
  if (m == 0) throw std::invalid_argument("forward: empty token row");
  if (row.n_valid() == 0) throw std::invalid_argument("forward: all tokens masked");

  // constants
  Tensor tau_col = Tensor::zeros({m, 1});
  Tensor val_col = Tensor::zeros({m, 1});
  Tensor mask = Tensor::zeros({1, m});
  Tensor gaps = Tensor::zeros({m, m});
  std::vector<int> emb_rows(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    tau_col.data[static_cast<std::size_t>(j)] = row.tau[static_cast<std::size_t>(j)];
    val_col.data[static_cast<std::size_t>(j)] = row.value[static_cast<std::size_t>(j)];
    mask.data[static_cast<std::size_t>(j)] = row.valid[static_cast<std::size_t>(j)] ? 0.0 : kNegInf;
    emb_rows[static_cast<std::size_t>(j)] = row.var_id[static_cast<std::size_t>(j)] - 1;
    for (int b = 0; b < m; ++b) gaps.at(j, b) = std::fabs(row.tau[static_cast<std::size_t>(j)] - row.tau[static_cast<std::size_t>(b)]);
  }
  const int tau_node = tape.constant(std::move(tau_col));
  const int val_node = tape.constant(std::move(val_col));
  const int mask_node = tape.constant(std::move(mask));
  const int gap_node = style_ == EncoderStyle::kGapResidual ? tape.constant(std::move(gaps)) : -1;

  auto dropout_mask = [&](int rows, int cols, double rate) -> int {
    Tensor t = Tensor::zeros({rows, cols});
    const double keep = 1.0 - rate;
    for (double& v : t.data) v = rng::bernoulli(*dropout_rng, keep) ? 1.0 / keep : 0.0;
    return tape.constant(std::move(t));
  };

  // token embedding: e_tau(tau) + e_k(k) + value embedding
  const int e_tau = tape.add_rowvec(
      tape.matmul(tape.tanh_op(tape.add_rowvec(tape.matmul(tau_node, tape.param(time_w1_)), tape.param(time_b1_))),
                  tape.param(time_w2_)),
      tape.param(time_b2_));
  const int e_var = tape.gather_rows(tape.param(var_embed_), emb_rows);
  int e_val;
  if (style_ == EncoderStyle::kGapResidual) {
    e_val = tape.add_rowvec(tape.matmul(val_node, tape.param(val_w_)), tape.param(val_b_));
  } else {
    e_val = tape.add_rowvec(
        tape.matmul(tape.tanh_op(tape.add_rowvec(tape.matmul(val_node, tape.param(val_w1_)), tape.param(val_b1_))),
                    tape.param(val_w2_)),
        tape.param(val_b2_));
  }
  int z = tape.add(tape.add(e_tau, e_var), e_val);

  ForwardResult result;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  for (const auto& lay : layers_) {
    const int zin = cfg_.layer_norm ? tape.layer_norm(z, tape.param(lay.ln1_g), tape.param(lay.ln1_b)) : z;
    result.layer_input.push_back(zin);

    const int q_full = tape.matmul(zin, tape.param(lay.wq));
    const int k_full = tape.matmul(zin, tape.param(lay.wk));
    const int v_full = tape.matmul(zin, tape.param(lay.wv));

    std::vector<int> head_outs;
    for (int h = 0; h < cfg_.heads; ++h) {
      const int qh = tape.slice_cols(q_full, h * dh, (h + 1) * dh);
      const int kh = tape.slice_cols(k_full, h * dh, (h + 1) * dh);
      const int vh = tape.slice_cols(v_full, h * dh, (h + 1) * dh);
      int scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
      if (style_ == EncoderStyle::kGapResidual && !force_zero_gap_) {
        const int lambda_h = tape.softplus_op(tape.slice_cols(tape.param(lay.eta), h, h + 1));
        scores = tape.sub(scores, tape.scalar_mul(lambda_h, gap_node));
      }
      int alpha = tape.softmax_rows(scores, mask_node);
      result.attention.push_back(alpha);
      if (dropout_rng && cfg_.attn_dropout > 0.0) alpha = tape.mul(alpha, dropout_mask(m, m, cfg_.attn_dropout));
      head_outs.push_back(tape.matmul(alpha, vh));
    }
    int o = tape.matmul(tape.concat_cols(head_outs), tape.param(lay.wo));
    if (dropout_rng && cfg_.dropout > 0.0) o = tape.mul(o, dropout_mask(m, d, cfg_.dropout));

    // token update: FFN applied to the residual sum z + o
    const int u = tape.add(z, o);
    const int uin = cfg_.layer_norm ? tape.layer_norm(u, tape.param(lay.ln2_g), tape.param(lay.ln2_b)) : u;
    int f = tape.add_rowvec(
        tape.matmul(tape.relu_op(tape.add_rowvec(tape.matmul(uin, tape.param(lay.ffn_w1)), tape.param(lay.ffn_b1))),
                    tape.param(lay.ffn_w2)),
        tape.param(lay.ffn_b2));
    if (dropout_rng && cfg_.dropout > 0.0) f = tape.mul(f, dropout_mask(m, d, cfg_.dropout));
    z = f;
  }

  // attention pooling over valid tokens
  const int scores = tape.matmul(tape.tanh_op(tape.add_rowvec(tape.matmul(z, tape.param(pool_w_)), tape.param(pool_b_))),
                                 tape.param(pool_v_));
  const int pi = tape.softmax_rows(tape.transpose(scores), mask_node);
  const int pooled = tape.matmul(pi, z);
  result.output = tape.add(tape.matmul(pooled, tape.param(head_w_)), tape.param(head_b_));
  return result;
}

double GapTransformer::evaluate(const TokenRow& row) const {
  ad::Tape tape(const_cast<ad::ParameterStore*>(&store_));
  const ForwardResult r = forward(tape, row, nullptr);
  return tape.value(r.output).data[0];
}

double predict_proposed(const AnchorSample& sample, const LmmFit& lmm, const GapTransformer& model, const TrainStats& stats) {
  const TokenRow row = tokenize(sample.history, stats, model.config());
  return predict_fixed(lmm, sample.x) + model.evaluate(row);
}

}  // namespace gapstride
