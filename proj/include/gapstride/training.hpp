#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gapstride/baselines.hpp"
#include "gapstride/cohort.hpp"
#include "gapstride/evaluation.hpp"
#include "gapstride/mixedfx.hpp"
#include "gapstride/model.hpp"

namespace gapstride {

/// Raised when a loss or gradient goes non-finite; the CLI maps it to the
/// numerical-abort exit code.
class NumericalAbort : public std::runtime_error {
 public:
  explicit NumericalAbort(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double lr_proposed = 3e-4;
  double lr_grud = 1e-3;
  double lr_strats = 3e-4;
  int patience = 10;
  double validation_fraction = 0.25;  // of the training pool
  double clip_norm = 5.0;             // global-norm gradient clip; <= 0 disables
  std::uint64_t seed = 42;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 0 = initialization, before any update
  double train_loss = 0.0;
  double val_mse = 0.0;
  std::vector<double> lambdas_per_month;  // proposed model only
};

/// Mean of ((y - g_stat) - r)^2 — the empirical objective. The subtraction
/// order is pinned so the residual form below is bit-identical.
double compute_objective(const std::vector<double>& y, const std::vector<double>& g_stat, const std::vector<double>& residuals);

/// Mean of (u - r)^2 over precomputed residual targets u = y - g_stat.
double compute_objective_residual(const std::vector<double>& u, const std::vector<double>& residuals);

struct TrainedProposed {
  GapTransformer model;
  LmmSpec lmm_spec;
  LmmFit lmm;
  TrainStats stats;
  std::vector<EpochLog> log;
  double init_train_loss = 0.0;
  double final_train_loss = 0.0;
  int best_epoch = 0;

  explicit TrainedProposed(GapTransformer m) : model(std::move(m)) {}
};

TrainedProposed train_proposed(const CohortTable& cohort, const std::vector<AnchorSample>& pool_anchors, const SplitPlan& plan,
                               const ModelConfig& model_cfg, const TrainConfig& train_cfg);

enum class BaselineArch { kGrud, kStrats };
const char* arch_name(BaselineArch arch);

struct TrainedBaseline {
  BaselineArch arch;
  TrainStats stats;
  std::vector<double> x_bar;  // GRU-D training means (standardized scale)
  std::unique_ptr<GrudModel> grud;
  std::unique_ptr<StratsModel> strats;
  GrudConfig grud_cfg;
  StratsConfig strats_cfg;
  std::vector<EpochLog> log;
  double init_train_loss = 0.0;
  int best_epoch = 0;

  double predict(const AnchorSample& sample) const;
};

TrainedBaseline train_baseline(BaselineArch arch, const CohortTable& cohort, const std::vector<AnchorSample>& pool_anchors,
                               const SplitPlan& plan, const GrudConfig& grud_cfg, const StratsConfig& strats_cfg,
                               const TrainConfig& train_cfg);

// ---------------------------------------------------------------------------
// Checkpoint files: versioned JSON of named tensors plus a sidecar with the
// model configuration, training-stats digest, the referenced LMM fit, and
// the learned gap penalties in per-month and per-year units.
// ---------------------------------------------------------------------------

std::string proposed_checkpoint_json(const TrainedProposed& t, const ModelConfig& cfg, std::uint64_t seed,
                                     const std::string& config_digest);
std::string baseline_checkpoint_json(const TrainedBaseline& t, std::uint64_t seed, const std::string& config_digest);

struct LoadedProposed {
  ModelConfig model_cfg;
  LmmFit lmm;
  TrainStats stats;
  std::unique_ptr<GapTransformer> model;
};
LoadedProposed load_proposed_checkpoint(const std::string& json_text);

struct LoadedBaseline {
  BaselineArch arch;
  TrainStats stats;
  std::vector<double> x_bar;
  GrudConfig grud_cfg;
  StratsConfig strats_cfg;
  std::unique_ptr<GrudModel> grud;
  std::unique_ptr<StratsModel> strats;

  double predict(const AnchorSample& sample) const;
};
LoadedBaseline load_baseline_checkpoint(const std::string& json_text);

void write_training_log(const std::string& path, const std::vector<EpochLog>& log, const std::string& provenance);

}  // namespace gapstride
