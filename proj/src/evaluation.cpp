#include "gapstride/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

#include "gapstride/rng.hpp"

namespace gapstride {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

bool SplitPlan::in_train(const std::string& pid) const { return contains(train, pid); }
bool SplitPlan::in_validation(const std::string& pid) const { return contains(validation, pid); }
bool SplitPlan::in_test(const std::string& pid) const { return contains(test, pid); }

SplitPlan split_participants(std::vector<std::string> participant_ids, std::uint64_t seed, double test_fraction,
                             double validation_fraction_of_pool) {
  std::sort(participant_ids.begin(), participant_ids.end());
  participant_ids.erase(std::unique(participant_ids.begin(), participant_ids.end()), participant_ids.end());
  const std::size_t n = participant_ids.size();
  if (n < 5) throw std::invalid_argument("split_participants: need at least 5 participants");

  std::mt19937_64 g(rng::mix(seed));
  rng::shuffle(participant_ids, g);

  const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const std::size_t n_pool = n - n_test;
  const std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction_of_pool * static_cast<double>(n_pool)));
  if (n_test == 0 || n_val == 0 || n_pool - n_val == 0)
    throw std::invalid_argument("split_participants: too few participants for non-empty partitions");

  SplitPlan plan;
  plan.seed = seed;
  plan.test.assign(participant_ids.begin(), participant_ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  plan.validation.assign(participant_ids.begin() + static_cast<std::ptrdiff_t>(n_test),
                         participant_ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  plan.train.assign(participant_ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), participant_ids.end());
  return plan;
}

MetricReport compute_metrics(const std::vector<double>& y, const std::vector<double>& y_hat) {
  if (y.empty() || y.size() != y_hat.size())
    throw std::invalid_argument("compute_metrics: inputs must be equal-length and nonempty");
  const std::size_t n = y.size();
  const double dn = static_cast<double>(n);

  MetricReport r;
  r.n_test = static_cast<int>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - y_hat[i];
    r.mse += e * e;
    r.mae += std::fabs(e);
  }
  r.mse /= dn;
  r.mae /= dn;
  r.rmse = std::sqrt(r.mse);

  double ym = 0.0, pm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ym += y[i];
    pm += y_hat[i];
  }
  ym /= dn;
  pm /= dn;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (y[i] - ym) * (y_hat[i] - pm);
    sxx += (y[i] - ym) * (y[i] - ym);
    syy += (y_hat[i] - pm) * (y_hat[i] - pm);
  }
  if (sxx > 0.0 && syy > 0.0) r.corr = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return r;
}

double t_quantile_975(int df) {
  static const double kTable[30] = {
      12.706204736432, 4.302652729696, 3.182446305284, 2.776445105198, 2.570581835636, 2.446911851145,
      2.364624251593,  2.306004135204, 2.262157162854, 2.228138851965, 2.200985160083, 2.178812829663,
      2.160368656461,  2.144786687917, 2.131449545559, 2.119905299221, 2.109815577833, 2.100922040241,
      2.093024054408,  2.085963447266, 2.079613844728, 2.073873067904, 2.068657610419, 2.063898561628,
      2.059538552753,  2.055529438643, 2.051830516480, 2.048407141795, 2.045229642133, 2.042272456301};
  if (df < 1 || df > 30) throw std::invalid_argument("t_quantile_975: df must be in 1..30");
  return kTable[df - 1];
}

namespace {

MetricSummary summarize_values(std::string metric, const std::vector<double>& values) {
  MetricSummary m;
  m.metric = std::move(metric);
  m.values = values;
  m.n_seeds = static_cast<int>(values.size());
  const double s = static_cast<double>(values.size());
  for (double v : values) m.mean += v;
  m.mean /= s;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  const double sd = std::sqrt(ss / (s - 1.0));
  m.se = sd / std::sqrt(s);
  m.half_width = t_quantile_975(static_cast<int>(values.size()) - 1) * m.se;
  return m;
}

}  // namespace

SeedSummary aggregate_seeds(const std::vector<MetricReport>& per_seed) {
  if (per_seed.size() < 2) throw std::invalid_argument("aggregate_seeds: S >= 2 required");
  std::vector<double> mse, mae, rmse, corr;
  int corr_dropped = 0;
  for (const auto& r : per_seed) {
    mse.push_back(r.mse);
    mae.push_back(r.mae);
    rmse.push_back(r.rmse);
    if (r.corr)
      corr.push_back(*r.corr);
    else
      ++corr_dropped;
  }
  SeedSummary s;
  s.mse = summarize_values("mse", mse);
  s.mae = summarize_values("mae", mae);
  s.rmse = summarize_values("rmse", rmse);
  s.corr_excluded_seeds = corr_dropped;
  if (corr.size() >= 2) {
    s.corr = summarize_values("corr", corr);
    s.corr_interval_defined = true;
  } else {
    s.corr.metric = "corr";
    s.corr.values = corr;
    s.corr.n_seeds = static_cast<int>(corr.size());
    s.corr.mean = corr.size() == 1 ? corr[0] : std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

std::vector<Gain> relative_gains(const SeedSummary& from, const SeedSummary& to) {
  auto gain = [](const MetricSummary& a, const MetricSummary& b) {
    Gain g;
    g.metric = a.metric;
    g.delta = b.mean - a.mean;
    g.pct = 100.0 * g.delta / a.mean;
    return g;
  };
  std::vector<Gain> out;
  out.push_back(gain(from.mse, to.mse));
  out.push_back(gain(from.mae, to.mae));
  out.push_back(gain(from.rmse, to.rmse));
  out.push_back(gain(from.corr, to.corr));
  return out;
}

std::string format_mean_pm(const MetricSummary& m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", m.mean, m.half_width);
  return buf;
}

std::string format_gain(const Gain& g) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%+.3f (%+.1f%%)", g.delta, g.pct);
  return buf;
}

}  // namespace gapstride
