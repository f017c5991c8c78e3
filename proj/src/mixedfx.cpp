#include "gapstride/mixedfx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "gapstride/tensor.hpp"
#include "json.hpp"

namespace gapstride {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kThetaMax = 1e4;
constexpr double kProfiledTol = 1e-10;

struct GroupStats {
  long n = 0;
  std::vector<double> xtx;  // p1 x p1
  std::vector<double> xty;  // p1
  std::vector<double> sx;   // X' 1
  double sy = 0.0;
  double yty = 0.0;
};

struct DesignData {
  int p1 = 0;  // columns incl. intercept
  long n = 0;
  std::vector<GroupStats> groups;
  std::vector<double> xtx_tot, xty_tot;
  double yty_tot = 0.0;
  long max_group = 0;
};

struct ProfiledFit {
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> beta;
  double sigma2 = 0.0;
};

// GLS at fixed theta via the Woodbury form W_g = I - c_g J, c_g =
// theta/(1 + theta n_g); returns the profiled (over beta, sigma^2) ML
// log-likelihood.
ProfiledFit profiled_at(const DesignData& d, double theta) {
  const int p1 = d.p1;
  std::vector<double> a(d.xtx_tot);
  std::vector<double> b(d.xty_tot);
  double logdet_w = 0.0;
  for (const auto& g : d.groups) {
    const double c = theta / (1.0 + theta * static_cast<double>(g.n));
    logdet_w += std::log(1.0 + theta * static_cast<double>(g.n));
    if (c == 0.0) continue;
    for (int i = 0; i < p1; ++i) {
      for (int j = 0; j < p1; ++j) a[static_cast<std::size_t>(i) * p1 + j] -= c * g.sx[static_cast<std::size_t>(i)] * g.sx[static_cast<std::size_t>(j)];
      b[static_cast<std::size_t>(i)] -= c * g.sy * g.sx[static_cast<std::size_t>(i)];
    }
  }
  std::vector<double> chol(a);
  if (!linalg::cholesky_lower(chol, p1)) return {};  // -inf marks an infeasible point
  ProfiledFit out;
  out.beta = linalg::cholesky_solve(chol, p1, b);

  // weighted RSS: r'r - sum_g c_g (sum of residuals in g)^2
  double rtr = d.yty_tot;
  for (int i = 0; i < p1; ++i) {
    rtr -= 2.0 * out.beta[static_cast<std::size_t>(i)] * d.xty_tot[static_cast<std::size_t>(i)];
    for (int j = 0; j < p1; ++j)
      rtr += out.beta[static_cast<std::size_t>(i)] * d.xtx_tot[static_cast<std::size_t>(i) * p1 + j] * out.beta[static_cast<std::size_t>(j)];
  }
  double rss_w = rtr;
  for (const auto& g : d.groups) {
    const double c = theta / (1.0 + theta * static_cast<double>(g.n));
    if (c == 0.0) continue;
    double rsum = g.sy;
    for (int i = 0; i < p1; ++i) rsum -= g.sx[static_cast<std::size_t>(i)] * out.beta[static_cast<std::size_t>(i)];
    rss_w -= c * rsum * rsum;
  }
  if (rss_w <= 0.0) return {};

  const double n = static_cast<double>(d.n);
  out.sigma2 = rss_w / n;
  out.loglik = -0.5 * (n * std::log(2.0 * kPi) + n * std::log(out.sigma2) + logdet_w + n);
  return out;
}

}  // namespace

LmmFit fit_lmm(const LmmSpec& spec, const std::vector<AnchorSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("fit_lmm: no samples");
  const CovariateSchema& schema = CovariateSchema::instance();

  std::set<std::string> seen;
  std::vector<int> col_idx;
  for (const auto& c : spec.fixed_effect_columns) {
    if (!seen.insert(c).second) throw std::invalid_argument("fit_lmm: duplicate column '" + c + "'");
    const int idx = schema.index_of(c);
    if (idx < 0) throw std::invalid_argument("fit_lmm: unknown column '" + c + "'");
    col_idx.push_back(idx);
  }

  const int p = static_cast<int>(col_idx.size());
  const int p1 = p + 1;
  const long n = static_cast<long>(samples.size());

  // column standardization over observed entries
  std::vector<double> mean(p, 0.0), sd(p, 1.0);
  for (int j = 0; j < p; ++j) {
    double s = 0.0, ss = 0.0;
    long cnt = 0;
    for (const auto& a : samples) {
      const double v = a.x[static_cast<std::size_t>(col_idx[static_cast<std::size_t>(j)])];
      if (std::isnan(v)) continue;
      s += v;
      ss += v * v;
      ++cnt;
    }
    if (cnt > 0) mean[static_cast<std::size_t>(j)] = s / static_cast<double>(cnt);
    if (cnt > 1) {
      const double var = (ss - static_cast<double>(cnt) * mean[static_cast<std::size_t>(j)] * mean[static_cast<std::size_t>(j)]) /
                         static_cast<double>(cnt - 1);
      if (var > 1e-12) sd[static_cast<std::size_t>(j)] = std::sqrt(var);
    }
  }

  auto design_row = [&](const AnchorSample& a, std::vector<double>& row) {
    row[0] = 1.0;
    for (int j = 0; j < p; ++j) {
      const double v = a.x[static_cast<std::size_t>(col_idx[static_cast<std::size_t>(j)])];
      double z = 0.0;
      if (!std::isnan(v)) z = std::clamp((v - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)], -6.0, 6.0);
      row[static_cast<std::size_t>(j) + 1] = z;
    }
  };

  // rank check on the full standardized design
  {
    std::vector<double> gram(static_cast<std::size_t>(p1) * p1, 0.0);
    std::vector<double> row(p1);
    for (const auto& a : samples) {
      design_row(a, row);
      for (int i = 0; i < p1; ++i)
        for (int j = 0; j < p1; ++j) gram[static_cast<std::size_t>(i) * p1 + j] += row[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(j)];
    }
    const std::vector<int> dep = linalg::dependent_columns(gram, p1, 1e-10);
    if (!dep.empty()) {
      std::vector<std::string> names;
      for (int i : dep) names.push_back(i == 0 ? "(intercept)" : spec.fixed_effect_columns[static_cast<std::size_t>(i - 1)]);
      std::ostringstream os;
      os << "fit_lmm: design matrix rank deficient; collinear columns:";
      for (const auto& s : names) os << ' ' << s;
      throw RankDeficientError(os.str(), names);
    }
  }

  // per-participant sufficient statistics (groups in order of first
  // appearance)
  DesignData d;
  d.p1 = p1;
  d.n = n;
  d.xtx_tot.assign(static_cast<std::size_t>(p1) * p1, 0.0);
  d.xty_tot.assign(static_cast<std::size_t>(p1), 0.0);
  std::map<std::string, std::size_t> group_of;
  std::vector<double> row(p1);
  for (const auto& a : samples) {
    auto [it, inserted] = group_of.try_emplace(a.participant_id, d.groups.size());
    if (inserted) {
      GroupStats g;
      g.xtx.assign(static_cast<std::size_t>(p1) * p1, 0.0);
      g.xty.assign(static_cast<std::size_t>(p1), 0.0);
      g.sx.assign(static_cast<std::size_t>(p1), 0.0);
      d.groups.push_back(std::move(g));
    }
    GroupStats& g = d.groups[it->second];
    design_row(a, row);
    ++g.n;
    for (int i = 0; i < p1; ++i) {
      g.sx[static_cast<std::size_t>(i)] += row[static_cast<std::size_t>(i)];
      g.xty[static_cast<std::size_t>(i)] += row[static_cast<std::size_t>(i)] * a.y;
      for (int j = 0; j < p1; ++j) g.xtx[static_cast<std::size_t>(i) * p1 + j] += row[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(j)];
    }
    g.sy += a.y;
    g.yty += a.y * a.y;
  }
  for (const auto& g : d.groups) {
    d.max_group = std::max(d.max_group, g.n);
    d.yty_tot += g.yty;
    for (int i = 0; i < p1; ++i) {
      d.xty_tot[static_cast<std::size_t>(i)] += g.xty[static_cast<std::size_t>(i)];
      for (int j = 0; j < p1; ++j) d.xtx_tot[static_cast<std::size_t>(i) * p1 + j] += g.xtx[static_cast<std::size_t>(i) * p1 + j];
    }
  }

  double theta_hat = 0.0;
  bool degenerate = false;
  if (d.max_group <= 1) {
    // every participant contributes one anchor: theta is unidentified and
    // the profiled likelihood is flat; return the OLS fit
    degenerate = true;
  } else {
    // coarse bracket scan, then golden-section refinement
    std::vector<double> grid{0.0};
    for (int i = 0; i <= 60; ++i) grid.push_back(std::pow(10.0, -6.0 + 10.0 * i / 60.0));
    std::size_t best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double ll = profiled_at(d, grid[i]).loglik;
      if (ll > best_ll) {
        best_ll = ll;
        best = i;
      }
    }
    double lo = best == 0 ? 0.0 : grid[best - 1];
    double hi = best + 1 < grid.size() ? grid[best + 1] : kThetaMax;

    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - gr * (hi - lo);
    double x2 = lo + gr * (hi - lo);
    double f1 = profiled_at(d, x1).loglik;
    double f2 = profiled_at(d, x2).loglik;
    double prev = std::max(f1, f2);
    for (int it = 0; it < 400; ++it) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = profiled_at(d, x2).loglik;
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = profiled_at(d, x1).loglik;
      }
      const double cur = std::max(f1, f2);
      if (std::fabs(cur - prev) < kProfiledTol && hi - lo < 1e-9 * (1.0 + hi)) break;
      prev = cur;
    }
    theta_hat = f1 > f2 ? x1 : x2;
    // keep the boundary exactly when it wins
    if (profiled_at(d, 0.0).loglik >= profiled_at(d, theta_hat).loglik) theta_hat = 0.0;
  }

  const ProfiledFit fit = profiled_at(d, theta_hat);
  if (!std::isfinite(fit.loglik)) throw std::runtime_error("fit_lmm: profiled likelihood not finite at the optimum");

  LmmFit out;
  out.columns = spec.fixed_effect_columns;
  out.beta0 = fit.beta[0];
  out.beta.assign(fit.beta.begin() + 1, fit.beta.end());
  out.sigma2_e = fit.sigma2;
  out.sigma2_b = theta_hat * fit.sigma2;
  out.loglik = fit.loglik;
  out.n_train = n;
  out.q = p1 + 2;
  out.ols_degenerate = degenerate;
  out.col_mean = mean;
  out.col_sd = sd;
  out.bic = bic(out);
  return out;
}

double bic(const LmmFit& fit) { return -2.0 * fit.loglik + static_cast<double>(fit.q) * std::log(static_cast<double>(fit.n_train)); }

std::pair<LmmSpec, LmmFit> select_by_bic(const std::vector<std::pair<std::string, std::vector<std::string>>>& candidate_blocks,
                                         const std::vector<AnchorSample>& samples) {
  LmmSpec spec;
  LmmFit best = fit_lmm(spec, samples);
  std::vector<bool> used(candidate_blocks.size(), false);

  for (;;) {
    int pick = -1;
    LmmFit pick_fit;
    for (std::size_t b = 0; b < candidate_blocks.size(); ++b) {
      if (used[b]) continue;
      LmmSpec trial = spec;
      for (const auto& c : candidate_blocks[b].second) trial.fixed_effect_columns.push_back(c);
      try {
        LmmFit f = fit_lmm(trial, samples);
        const double ref = pick < 0 ? best.bic : pick_fit.bic;
        if (f.bic < ref) {  // strict <: earlier block wins ties
          pick = static_cast<int>(b);
          pick_fit = std::move(f);
        }
      } catch (const RankDeficientError&) {
        continue;  // collinear with the current design; selection continues
      }
    }
    if (pick < 0) break;
    used[static_cast<std::size_t>(pick)] = true;
    for (const auto& c : candidate_blocks[static_cast<std::size_t>(pick)].second) spec.fixed_effect_columns.push_back(c);
    best = std::move(pick_fit);
  }
  return {spec, best};
}

double predict_fixed(const LmmFit& fit, const std::vector<double>& x) {
  const CovariateSchema& schema = CovariateSchema::instance();
  if (x.size() != static_cast<std::size_t>(schema.size()))
    throw std::invalid_argument("predict_fixed: covariate vector has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(schema.size()));
  double yhat = fit.beta0;
  for (std::size_t j = 0; j < fit.columns.size(); ++j) {
    const int idx = schema.index_of(fit.columns[j]);
    const double v = x[static_cast<std::size_t>(idx)];
    double z = 0.0;
    if (!std::isnan(v)) z = std::clamp((v - fit.col_mean[j]) / fit.col_sd[j], -6.0, 6.0);
    yhat += fit.beta[j] * z;
  }
  return yhat;
}

std::string lmm_to_json(const LmmFit& fit) {
  nlohmann::json beta;
  beta["(intercept)"] = fit.beta0;
  for (std::size_t j = 0; j < fit.columns.size(); ++j) beta[fit.columns[j]] = fit.beta[j];
  nlohmann::json j{{"columns", fit.columns},   {"beta", std::move(beta)},     {"sigma2_b", fit.sigma2_b},
                   {"sigma2_e", fit.sigma2_e}, {"loglik", fit.loglik},        {"bic", fit.bic},
                   {"n_train", fit.n_train},   {"q", fit.q},                  {"ols_degenerate", fit.ols_degenerate},
                   {"col_mean", fit.col_mean}, {"col_sd", fit.col_sd}};
  return j.dump();
}

LmmFit lmm_from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  LmmFit fit;
  fit.columns = j.at("columns").get<std::vector<std::string>>();
  fit.beta0 = j.at("beta").at("(intercept)").get<double>();
  for (const auto& c : fit.columns) fit.beta.push_back(j.at("beta").at(c).get<double>());
  fit.sigma2_b = j.at("sigma2_b").get<double>();
  fit.sigma2_e = j.at("sigma2_e").get<double>();
  fit.loglik = j.at("loglik").get<double>();
  fit.bic = j.at("bic").get<double>();
  fit.n_train = j.at("n_train").get<long>();
  fit.q = j.at("q").get<int>();
  fit.ols_degenerate = j.at("ols_degenerate").get<bool>();
  fit.col_mean = j.at("col_mean").get<std::vector<double>>();
  fit.col_sd = j.at("col_sd").get<std::vector<double>>();
  return fit;
}

}  // namespace gapstride
