#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gapstride/autodiff.hpp"
#include "gapstride/cohort.hpp"
#include "gapstride/model.hpp"

namespace gapstride {

/// Monthly-grid view of one history for GRU-D: observed values, observation
/// mask, per-variable elapsed months since last observation, and the
/// last-observed value carried forward (training mean when never observed).
struct RegularGridSeries {
  std::vector<double> grid_tau;  // months relative to anchor, unit steps, last = 0
  Tensor x;                      // [T, D] standardized values (0 where unobserved)
  Tensor m;                      // [T, D] observation mask
  Tensor delta;                  // [T, D] months since last observation
  Tensor x_last;                 // [T, D] carried-forward value
  std::vector<double> x_bar;     // [D] training means

  int steps() const { return static_cast<int>(grid_tau.size()); }
  int vars() const { return x.cols(); }
};

struct GrudConfig {
  int hidden = 48;
  double dropout = 0.2;
  int grid_cap = 121;  // monthly cells kept (oldest dropped beyond this)
  int n_vars = vocab::kCount - 1;  // observable variables; ANCHOR excluded

  void validate() const;
};

/// Observations older than the capped grid start are dropped; multiple
/// observations of a variable inside one monthly cell keep the latest.
RegularGridSeries to_regular_grid(const History& history, const std::vector<double>& x_bar, const TrainStats& stats,
                                  int grid_cap = 121);

class GrudModel {
 public:
  GrudModel(const GrudConfig& cfg, std::uint64_t init_seed);

  const GrudConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }

  int forward(ad::Tape& tape, const RegularGridSeries& series, std::mt19937_64* dropout_rng = nullptr) const;
  double evaluate(const RegularGridSeries& series) const;

 private:
  GrudConfig cfg_;
  ad::ParameterStore store_;
  int w_gx_, b_gx_, w_gh_, b_gh_;
  int w_r_, u_r_, v_r_, b_r_;
  int w_q_, u_q_, v_q_, b_q_;
  int w_h_, u_h_, v_h_, b_h_;
  int head_w_, head_b_;
};

/// STraTS comparator: triplet tokens, standard attention scores, feed-forward
/// value embedding, same pooling family, direct regression head.
struct StratsConfig {
  int d = 48;
  int layers = 2;
  int heads = 4;
  double dropout = 0.2;
  double attn_dropout = 0.1;
  int m_max = 256;

  ModelConfig as_model_config() const;
};

class StratsModel {
 public:
  StratsModel(const StratsConfig& cfg, std::uint64_t init_seed);

  GapTransformer& encoder() { return encoder_; }
  const GapTransformer& encoder() const { return encoder_; }
  const StratsConfig& config() const { return cfg_; }

  double evaluate(const TokenRow& row) const { return encoder_.evaluate(row); }

 private:
  StratsConfig cfg_;
  GapTransformer encoder_;
};

}  // namespace gapstride
