#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gapstride/autodiff.hpp"
#include "gapstride/cohort.hpp"
#include "gapstride/mixedfx.hpp"

namespace gapstride {

struct ModelConfig {
  int d = 64;
  int layers = 2;
  int heads = 4;
  double dropout = 0.1;
  double attn_dropout = 0.1;
  int batch_size = 64;
  double gap_init_per_year = 0.1;
  int vocab_size = vocab::kCount;
  int m_max = 256;
  bool layer_norm = true;  // pre-norm; switchable deviation knob

  void validate() const;
};

/// One tokenized history: parallel arrays padded to a common length, with a
/// validity mask. Padded slots never influence any output.
struct TokenRow {
  std::vector<double> tau;
  std::vector<int> var_id;
  std::vector<double> value;  // standardized, clipped
  std::vector<std::uint8_t> valid;

  int length() const { return static_cast<int>(tau.size()); }
  int n_valid() const;
  void append_pad(int count);
};

struct TokenBatch {
  std::vector<TokenRow> rows;
};

TokenRow tokenize(const History& history, const TrainStats& stats, const ModelConfig& config);
TokenBatch tokenize_batch(const std::vector<AnchorSample>& samples, const TrainStats& stats, const ModelConfig& config);

enum class EncoderStyle {
  kGapResidual,     // gap penalty on, linear value embedding, residual head
  kStandardDirect,  // no gap penalty, feed-forward value embedding, direct head
};

struct ForwardResult {
  int output = -1;               // scalar node
  std::vector<int> attention;    // layers*heads softmax nodes
  std::vector<int> layer_input;  // per-layer attention input (post-norm) nodes
};

/// Triplet-token transformer over one history. Serves both the proposed
/// residual predictor and the standard-attention comparator; the two styles
/// differ only in the gap penalty, the value embedding, and how the head
/// output is consumed.
class GapTransformer {
 public:
  GapTransformer(const ModelConfig& cfg, EncoderStyle style, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  EncoderStyle style() const { return style_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }

  /// Builds the forward graph for one token row. Pass a dropout RNG during
  /// training; nullptr means evaluation mode.
  ForwardResult forward(ad::Tape& tape, const TokenRow& row, std::mt19937_64* dropout_rng = nullptr) const;

  double evaluate(const TokenRow& row) const;

  std::vector<double> lambdas_per_month() const;  // layers*heads
  double lambda_init_per_month() const;

  // Test hook: drop the gap penalty term entirely so scores are exactly the
  // content term.
  void set_force_zero_gap(bool on) { force_zero_gap_ = on; }

 private:
  struct LayerIds {
    int wq, wk, wv, wo, eta;
    int ln1_g, ln1_b, ln2_g, ln2_b;
    int ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  ModelConfig cfg_;
  EncoderStyle style_;
  bool force_zero_gap_ = false;
  ad::ParameterStore store_;
  int time_w1_, time_b1_, time_w2_, time_b2_;
  int var_embed_;
  int val_w_ = -1, val_b_ = -1;                              // linear value embedding
  int val_w1_ = -1, val_b1_ = -1, val_w2_ = -1, val_b2_ = -1;  // feed-forward value embedding
  std::vector<LayerIds> layers_;
  int pool_w_, pool_b_, pool_v_;
  int head_w_, head_b_;
};

/// Final predictor: marginal fixed-effect reference plus the learned
/// residual (evaluation mode).
double predict_proposed(const AnchorSample& sample, const LmmFit& lmm, const GapTransformer& model, const TrainStats& stats);

}  // namespace gapstride
