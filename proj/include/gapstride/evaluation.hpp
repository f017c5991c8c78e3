#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gapstride {

struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  bool in_train(const std::string& pid) const;
  bool in_validation(const std::string& pid) const;
  bool in_test(const std::string& pid) const;
};

/// Deterministic participant-level split: round(test_fraction * n) test
/// participants, remaining pool split train/validation.
SplitPlan split_participants(std::vector<std::string> participant_ids, std::uint64_t seed, double test_fraction = 0.2,
                             double validation_fraction_of_pool = 0.25);

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> corr;  // empty = undefined (zero variance)
  int n_test = 0;
};

MetricReport compute_metrics(const std::vector<double>& y, const std::vector<double>& y_hat);

struct MetricSummary {
  std::string metric;
  double mean = 0.0;
  double se = 0.0;          // sd / sqrt(S), (S-1) divisor
  double half_width = 0.0;  // t_{S-1,0.975} * se
  std::vector<double> values;
  int n_seeds = 0;
};

struct SeedSummary {
  MetricSummary mse, mae, rmse;
  MetricSummary corr;            // over seeds where corr is defined
  int corr_excluded_seeds = 0;   // undefined-corr seeds dropped with a warning
  bool corr_interval_defined = false;
};

SeedSummary aggregate_seeds(const std::vector<MetricReport>& per_seed);

struct Gain {
  std::string metric;
  double delta = 0.0;  // to - from
  double pct = 0.0;    // 100 * delta / from
};

/// Differences of repeated-seed means, `from` -> `to`; negative = lower
/// error, positive = higher correlation.
std::vector<Gain> relative_gains(const SeedSummary& from, const SeedSummary& to);

/// Hard-coded upper 97.5% t quantiles for df 1..30.
double t_quantile_975(int df);

/// "2.227 ± 0.311" rendering used by the report tables.
std::string format_mean_pm(const MetricSummary& m);
/// "-0.291 (-13.1%)" rendering used by the gains table.
std::string format_gain(const Gain& g);

}  // namespace gapstride
