#include "gapstride/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "gapstride/baselines.hpp"
#include "gapstride/rng.hpp"
#include "json.hpp"

namespace gapstride::oracles {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Local dense linear algebra. Deliberately separate from gapstride::linalg:
// column-oriented Cholesky (Crout) and Gaussian elimination with partial
// pivoting, so fit_lmm and its oracle share no numerical route.
// ---------------------------------------------------------------------------

bool chol_crout(std::vector<double>& a, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<std::size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) d -= a[static_cast<std::size_t>(j) * n + k] * a[static_cast<std::size_t>(j) * n + k];
    if (d <= 0.0 || !std::isfinite(d)) return false;
    const double dj = std::sqrt(d);
    a[static_cast<std::size_t>(j) * n + j] = dj;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      a[static_cast<std::size_t>(i) * n + j] = s / dj;
    }
    for (int i = 0; i < j; ++i) a[static_cast<std::size_t>(i) * n + j] = 0.0;
  }
  return true;
}

std::vector<double> chol_solve_vec(const std::vector<double>& l, int n, std::vector<double> b) {
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) s -= l[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = s / l[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k) s -= l[static_cast<std::size_t>(k) * n + i] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = s / l[static_cast<std::size_t>(i) * n + i];
  }
  return b;
}

std::vector<double> gauss_solve(std::vector<double> a, int n, std::vector<double> b) {
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::fabs(a[static_cast<std::size_t>(r) * n + c]) > std::fabs(a[static_cast<std::size_t>(piv) * n + c])) piv = r;
    if (a[static_cast<std::size_t>(piv) * n + c] == 0.0) throw std::runtime_error("gauss_solve: singular system");
    if (piv != c) {
      for (int k = 0; k < n; ++k) std::swap(a[static_cast<std::size_t>(piv) * n + k], a[static_cast<std::size_t>(c) * n + k]);
      std::swap(b[static_cast<std::size_t>(piv)], b[static_cast<std::size_t>(c)]);
    }
    for (int r = c + 1; r < n; ++r) {
      const double f = a[static_cast<std::size_t>(r) * n + c] / a[static_cast<std::size_t>(c) * n + c];
      for (int k = c; k < n; ++k) a[static_cast<std::size_t>(r) * n + k] -= f * a[static_cast<std::size_t>(c) * n + k];
      b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(c)];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[static_cast<std::size_t>(r)];
    for (int k = r + 1; k < n; ++k) s -= a[static_cast<std::size_t>(r) * n + k] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(r)] = s / a[static_cast<std::size_t>(r) * n + r];
  }
  return b;
}

// ---------------------------------------------------------------------------
// dense LMM oracle
// ---------------------------------------------------------------------------

struct DenseDesign {
  int n = 0, p1 = 0;
  std::vector<double> x;  // n x p1, intercept first
  std::vector<double> y;
  std::vector<int> group;  // participant index per row
};

DenseDesign build_design(const LmmSpec& spec, const std::vector<AnchorSample>& samples) {
  const CovariateSchema& schema = CovariateSchema::instance();
  DenseDesign d;
  d.n = static_cast<int>(samples.size());
  const int p = static_cast<int>(spec.fixed_effect_columns.size());
  d.p1 = p + 1;

  std::vector<int> idx;
  for (const auto& c : spec.fixed_effect_columns) {
    const int i = schema.index_of(c);
    if (i < 0) throw std::invalid_argument("lmm_dense_oracle: unknown column '" + c + "'");
    idx.push_back(i);
  }
  // same standardization definition as the fitter (training mean/sd over
  // observed entries, clip at 6 SD, mean imputation)
  std::vector<double> mean(p, 0.0), sd(p, 1.0);
  for (int j = 0; j < p; ++j) {
    double s = 0.0, ss = 0.0;
    long cnt = 0;
    for (const auto& a : samples) {
      const double v = a.x[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
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

  d.x.assign(static_cast<std::size_t>(d.n) * d.p1, 0.0);
  std::map<std::string, int> gid;
  for (int i = 0; i < d.n; ++i) {
    const auto& a = samples[static_cast<std::size_t>(i)];
    d.x[static_cast<std::size_t>(i) * d.p1] = 1.0;
    for (int j = 0; j < p; ++j) {
      const double v = a.x[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
      double z = 0.0;
      if (!std::isnan(v)) z = std::clamp((v - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)], -6.0, 6.0);
      d.x[static_cast<std::size_t>(i) * d.p1 + 1 + j] = z;
    }
    d.y.push_back(a.y);
    auto [it, fresh] = gid.try_emplace(a.participant_id, static_cast<int>(gid.size()));
    d.group.push_back(it->second);
  }
  return d;
}

struct DensePoint {
  double loglik = kNegInf;
  std::vector<double> beta;
};

DensePoint dense_loglik_at(const DenseDesign& d, double sigma_b2, double sigma2) {
  const int n = d.n, p1 = d.p1;
  if (sigma2 <= 0.0) return {};
  // full marginal covariance
  std::vector<double> cov(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    cov[static_cast<std::size_t>(i) * n + i] = sigma2;
    for (int j = 0; j < n; ++j)
      if (d.group[static_cast<std::size_t>(i)] == d.group[static_cast<std::size_t>(j)]) cov[static_cast<std::size_t>(i) * n + j] += sigma_b2;
  }
  if (!chol_crout(cov, n)) return {};
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(cov[static_cast<std::size_t>(i) * n + i]);

  // GLS: beta = (X' S^-1 X)^-1 X' S^-1 y
  std::vector<double> siy = chol_solve_vec(cov, n, d.y);
  std::vector<double> six(static_cast<std::size_t>(n) * p1);
  for (int j = 0; j < p1; ++j) {
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = d.x[static_cast<std::size_t>(i) * p1 + j];
    col = chol_solve_vec(cov, n, col);
    for (int i = 0; i < n; ++i) six[static_cast<std::size_t>(i) * p1 + j] = col[static_cast<std::size_t>(i)];
  }
  std::vector<double> xtsx(static_cast<std::size_t>(p1) * p1, 0.0), xtsy(static_cast<std::size_t>(p1), 0.0);
  for (int a = 0; a < p1; ++a) {
    for (int i = 0; i < n; ++i) xtsy[static_cast<std::size_t>(a)] += d.x[static_cast<std::size_t>(i) * p1 + a] * siy[static_cast<std::size_t>(i)];
    for (int b = 0; b < p1; ++b)
      for (int i = 0; i < n; ++i)
        xtsx[static_cast<std::size_t>(a) * p1 + b] += d.x[static_cast<std::size_t>(i) * p1 + a] * six[static_cast<std::size_t>(i) * p1 + b];
  }
  DensePoint out;
  out.beta = gauss_solve(xtsx, p1, xtsy);

  std::vector<double> resid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double yhat = 0.0;
    for (int j = 0; j < p1; ++j) yhat += d.x[static_cast<std::size_t>(i) * p1 + j] * out.beta[static_cast<std::size_t>(j)];
    resid[static_cast<std::size_t>(i)] = d.y[static_cast<std::size_t>(i)] - yhat;
  }
  const std::vector<double> sir = chol_solve_vec(cov, n, resid);
  double quad = 0.0;
  for (int i = 0; i < n; ++i) quad += resid[static_cast<std::size_t>(i)] * sir[static_cast<std::size_t>(i)];

  out.loglik = -0.5 * (static_cast<double>(n) * std::log(2.0 * kPi) + logdet + quad);
  return out;
}

std::vector<double> geom_grid(double lo, double hi, int count) {
  std::vector<double> g;
  for (int i = 0; i < count; ++i) g.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  return g;
}

}  // namespace

double lmm_dense_loglik(const LmmSpec& spec, const std::vector<AnchorSample>& samples, double sigma2_b, double sigma2_e) {
  const DenseDesign d = build_design(spec, samples);
  return dense_loglik_at(d, sigma2_b, sigma2_e).loglik;
}

DenseLmmResult lmm_dense_oracle(const LmmSpec& spec, const std::vector<AnchorSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("lmm_dense_oracle: no samples");
  if (samples.size() > 200) throw std::invalid_argument("lmm_dense_oracle: more than 200 observations");
  const DenseDesign d = build_design(spec, samples);

  double vy = 0.0, my = 0.0;
  for (double v : d.y) my += v;
  my /= static_cast<double>(d.n);
  for (double v : d.y) vy += (v - my) * (v - my);
  vy = d.n > 1 ? vy / static_cast<double>(d.n - 1) : 1.0;
  if (vy <= 0.0) vy = 1.0;

  // 41x41 log-spaced grid; the sigma_b^2 axis carries an exact zero
  std::vector<double> s2_grid = geom_grid(1e-3 * vy, 1e1 * vy, 41);
  std::vector<double> sb_grid{0.0};
  for (double v : geom_grid(1e-4 * vy, 1e1 * vy, 40)) sb_grid.push_back(v);

  double best_ll = kNegInf, best_sb = 0.0, best_s2 = vy;
  auto consider = [&](double sb, double s2) {
    const DensePoint p = dense_loglik_at(d, sb, s2);
    if (p.loglik > best_ll) {
      best_ll = p.loglik;
      best_sb = sb;
      best_s2 = s2;
    }
  };
  for (double sb : sb_grid)
    for (double s2 : s2_grid) consider(sb, s2);

  // local refinement: shrink a multiplicative window around the incumbent
  double ratio = std::pow(1e4, 1.0 / 40.0);  // initial grid spacing
  for (int round = 0; round < 70; ++round) {
    const double prev = best_ll;
    std::vector<double> sbs;
    if (best_sb == 0.0) {
      sbs.push_back(0.0);
      for (double v : geom_grid(1e-10 * vy, std::max(1e-9 * vy, 1e-4 * vy * std::pow(ratio, 2.0)), 7)) sbs.push_back(v);
    } else {
      sbs = geom_grid(best_sb / ratio, best_sb * ratio, 9);
      sbs.push_back(0.0);
    }
    const std::vector<double> s2s = geom_grid(best_s2 / ratio, best_s2 * ratio, 9);
    for (double sb : sbs)
      for (double s2 : s2s) consider(sb, s2);
    ratio = std::pow(ratio, 0.6);
    if (best_ll - prev < 1e-13 && ratio < 1.0 + 1e-12) break;
  }

  const DensePoint p = dense_loglik_at(d, best_sb, best_s2);
  DenseLmmResult out;
  out.beta0 = p.beta[0];
  out.beta.assign(p.beta.begin() + 1, p.beta.end());
  out.sigma2_b = best_sb;
  out.sigma2_e = best_s2;
  out.loglik = p.loglik;
  return out;
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

FdCheck finite_difference_grads(const std::function<double()>& loss_fn, ad::ParameterStore& params,
                                const std::vector<double>& analytic, double h) {
  const std::vector<double> base = params.values_flat();
  if (analytic.size() != base.size()) throw std::invalid_argument("finite_difference_grads: analytic gradient size mismatch");

  FdCheck check;
  check.n_params = base.size();
  std::vector<double> work = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    work[i] = base[i] + h;
    params.set_values_flat(work);
    const double fp = loss_fn();
    work[i] = base[i] - h;
    params.set_values_flat(work);
    const double fm = loss_fn();
    work[i] = base[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      params.set_values_flat(base);
      throw std::runtime_error("finite_difference_grads: non-finite perturbation loss at parameter " + std::to_string(i));
    }
    const double fd = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
    if (rel > check.max_rel_error) {
      check.max_rel_error = rel;
      check.worst_index = i;
    }
  }
  params.set_values_flat(base);
  return check;
}

// ---------------------------------------------------------------------------
// attention monotonicity
// ---------------------------------------------------------------------------

namespace {

// alpha_b(d) through the production masked-softmax primitive
double alpha_b_via_kernel(const AttentionInstance& inst, double d) {
  ad::Tape tape;
  const int m = static_cast<int>(inst.other_scores.size()) + 1;
  Tensor scores = Tensor::zeros({1, m});
  scores.data[0] = inst.c_b - inst.lambda * d;
  for (std::size_t c = 0; c < inst.other_scores.size(); ++c) scores.data[c + 1] = inst.other_scores[c];
  const int node = tape.softmax_rows(tape.constant(std::move(scores)), -1);
  return tape.value(node).data[0];
}

}  // namespace

OracleReport monotonicity_sweep(const AttentionInstance& inst, const std::vector<double>& d_grid, double deriv_tol) {
  OracleReport rep;
  rep.check = "attention_monotonicity";
  rep.tolerance = deriv_tol;
  std::ostringstream os;
  os << "lambda=" << inst.lambda << " keys=" << inst.other_scores.size() + 1;
  rep.instance = os.str();

  // independent closed form: A from plain exponential sums
  double a_sum = 0.0;
  for (double s : inst.other_scores) a_sum += std::exp(s);

  double max_deriv_err = 0.0;
  bool monotone_ok = true;
  double prev = kNegInf;
  bool first = true;
  for (double dval : d_grid) {
    const double alpha = alpha_b_via_kernel(inst, dval);
    if (!first) {
      if (inst.lambda > 0.0 && !inst.other_scores.empty()) {
        if (!(alpha < prev)) monotone_ok = false;  // strict decrease
      } else if (inst.lambda == 0.0) {
        if (alpha != prev) monotone_ok = false;  // exactly constant
      }
    }
    prev = alpha;
    first = false;

    const double z = std::exp(inst.c_b - inst.lambda * dval);
    const double closed = -inst.lambda * a_sum * z / ((a_sum + z) * (a_sum + z));
    const double h = 1e-5;
    const double numeric = (alpha_b_via_kernel(inst, dval + h) - alpha_b_via_kernel(inst, dval - h)) / (2.0 * h);
    max_deriv_err = std::max(max_deriv_err, std::fabs(closed - numeric));
  }

  rep.main_value = prev;  // alpha at the largest gap
  rep.oracle_value = max_deriv_err;
  rep.discrepancy = max_deriv_err;
  rep.pass = monotone_ok && max_deriv_err <= deriv_tol;
  return rep;
}

std::vector<OracleReport> monotonicity_suite(std::uint64_t seed, int n_instances) {
  std::mt19937_64 g(rng::mix(seed));
  std::vector<double> d_grid;
  for (double d = 0.0; d <= 36.0; d += 0.5) d_grid.push_back(d);

  std::vector<OracleReport> out;
  for (int i = 0; i < n_instances; ++i) {
    AttentionInstance inst;
    const bool zero_lambda = i % 10 == 9;  // every tenth instance probes the lambda = 0 boundary
    inst.lambda = zero_lambda ? 0.0 : rng::uniform(g, 0.01, 2.0);
    inst.c_b = rng::uniform(g, -2.0, 2.0);
    const int competitors = 1 + static_cast<int>(rng::below(g, 6));
    for (int c = 0; c < competitors; ++c) inst.other_scores.push_back(rng::uniform(g, -2.0, 2.0));
    out.push_back(monotonicity_sweep(inst, d_grid));
  }
  return out;
}

// ---------------------------------------------------------------------------
// stability probe
// ---------------------------------------------------------------------------

std::vector<StabilityScaleReport> stability_probe(const GapTransformer& model, const std::vector<TokenRow>& base_rows,
                                                  const std::vector<double>& scales, int pairs_per_scale, std::uint64_t seed) {
  std::mt19937_64 g(rng::mix(seed ^ 0x5354414251ULL));
  std::vector<StabilityScaleReport> out;
  for (double scale : scales) {
    StabilityScaleReport rep;
    rep.scale = scale;
    for (int p = 0; p < pairs_per_scale; ++p) {
      const TokenRow& base = base_rows[rng::below(g, base_rows.size())];
      TokenRow pert = base;
      double dist = 0.0;
      for (int j = 0; j < base.length(); ++j) {
        if (!base.valid[static_cast<std::size_t>(j)]) continue;
        const double dtau = rng::uniform(g, -0.5, 0.5) * scale;
        const double dv = rng::uniform(g, -0.1, 0.1) * scale;
        pert.tau[static_cast<std::size_t>(j)] += dtau;
        pert.value[static_cast<std::size_t>(j)] += dv;
        dist = std::max(dist, std::fabs(dtau) / 12.0 + std::fabs(dv));
      }
      if (dist == 0.0) {
        ++rep.skipped;
        continue;
      }
      const double r0 = model.evaluate(base);
      const double r1 = model.evaluate(pert);
      rep.max_ratio = std::max(rep.max_ratio, std::fabs(r0 - r1) / dist);
      ++rep.pairs;
    }
    out.push_back(rep);
  }
  return out;
}

OracleReport stability_report(const std::vector<StabilityScaleReport>& per_scale, double blowup_factor) {
  OracleReport rep;
  rep.check = "stability_probe";
  rep.tolerance = blowup_factor;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  std::ostringstream os;
  for (const auto& s : per_scale) {
    os << "scale " << s.scale << ": max ratio " << s.max_ratio << "; ";
    lo = std::min(lo, s.max_ratio);
    hi = std::max(hi, s.max_ratio);
  }
  rep.instance = os.str();
  rep.main_value = hi;
  rep.oracle_value = lo;
  rep.discrepancy = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  rep.pass = lo > 0.0 && hi / lo < blowup_factor;
  return rep;
}

// ---------------------------------------------------------------------------
// full verification suite
// ---------------------------------------------------------------------------

namespace {

std::vector<AnchorSample> random_lmm_instance(std::mt19937_64& g, int n_participants, int max_per_participant,
                                              const std::vector<std::string>& columns) {
  const CovariateSchema& schema = CovariateSchema::instance();
  std::vector<AnchorSample> samples;
  for (int p = 0; p < n_participants; ++p) {
    const double b_i = rng::gaussian(g, 0.0, 0.7);
    const int n_obs = 1 + static_cast<int>(rng::below(g, static_cast<std::uint64_t>(max_per_participant)));
    for (int o = 0; o < n_obs; ++o) {
      AnchorSample a;
      a.participant_id = "V" + std::to_string(p);
      a.x.assign(static_cast<std::size_t>(schema.size()), std::numeric_limits<double>::quiet_NaN());
      double lin = 0.3;
      for (const auto& c : columns) {
        const double v = rng::gaussian(g, 0.0, 1.0);
        a.x[static_cast<std::size_t>(schema.index_of(c))] = v;
        lin += 0.5 * v;
      }
      a.y = lin + b_i + rng::gaussian(g, 0.0, 0.5);
      a.gap_months = 24.0;
      a.history.triplets.push_back({0.0, vocab::kAnchor, 0.0});
      samples.push_back(std::move(a));
    }
  }
  return samples;
}

TokenRow random_token_row(std::mt19937_64& g, int n_tokens) {
  TokenRow row;
  for (int j = 0; j < n_tokens; ++j) {
    row.tau.push_back(-rng::uniform(g, 0.0, 48.0));
    row.var_id.push_back(1 + static_cast<int>(rng::below(g, vocab::kCount)));
    row.value.push_back(rng::gaussian(g, 0.0, 1.0));
    row.valid.push_back(1);
  }
  return row;
}

}  // namespace

VerifySummary run_verification(std::uint64_t seed) {
  VerifySummary sum;
  std::mt19937_64 g(rng::mix(seed ^ 0x766572ULL));

  // 1. LMM vs dense oracle on 20 random instances
  const std::vector<std::string> cols{"cdrsb_anchor", "adas13_anchor", "apoe4"};
  for (int i = 0; i < 20; ++i) {
    const bool singleton = i >= 17;  // last instances exercise the OLS degeneration
    const int n_part = 2 + static_cast<int>(rng::below(g, 5));
    const auto samples = random_lmm_instance(g, n_part, singleton ? 1 : 5, cols);
    if (samples.size() > 30) {
      continue;
    }
    LmmSpec spec{cols};
    const LmmFit fit = fit_lmm(spec, samples);
    OracleReport rep;
    rep.instance = "instance " + std::to_string(i) + " (" + std::to_string(samples.size()) + " obs, " +
                   std::to_string(n_part) + " participants" + (singleton ? ", singleton" : "") + ")";
    if (singleton) {
      // degenerate path: beta must match OLS (GLS at sigma_b^2 = 0)
      rep.check = "lmm_singleton_ols";
      rep.tolerance = 1e-8;
      const DenseDesign dd = build_design(spec, samples);
      const DensePoint ols = dense_loglik_at(dd, 0.0, fit.sigma2_e);
      double beta_err = std::fabs(fit.beta0 - ols.beta[0]);
      for (std::size_t j = 0; j < fit.beta.size(); ++j) beta_err = std::max(beta_err, std::fabs(fit.beta[j] - ols.beta[j + 1]));
      rep.main_value = fit.loglik;
      rep.oracle_value = ols.loglik;
      rep.discrepancy = beta_err;
      rep.pass = fit.ols_degenerate && fit.sigma2_b == 0.0 && beta_err < 1e-8 && std::fabs(fit.loglik - ols.loglik) < 1e-6;
    } else {
      rep.check = "lmm_dense_oracle";
      rep.tolerance = 1e-6;
      const DenseLmmResult oracle = lmm_dense_oracle(spec, samples);
      double beta_err = std::fabs(fit.beta0 - oracle.beta0);
      for (std::size_t j = 0; j < fit.beta.size(); ++j) beta_err = std::max(beta_err, std::fabs(fit.beta[j] - oracle.beta[j]));
      rep.main_value = fit.loglik;
      rep.oracle_value = oracle.loglik;
      rep.discrepancy = std::fabs(fit.loglik - oracle.loglik);
      rep.pass = rep.discrepancy < 1e-6 && beta_err < 1e-5;
    }
    sum.reports.push_back(rep);
  }

  // 2. gradient fidelity for the three trainable models
  {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    cfg.attn_dropout = 0.0;
    GapTransformer model(cfg, EncoderStyle::kGapResidual, 7);
    // a nonzero head so the head branch gets exercised
    {
      auto& store = model.params();
      auto bump = [&](const char* name) {
        Tensor& t = store.at(store.find(name)).value;
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = 0.05 * static_cast<double>(i % 7) - 0.1;
      };
      bump("head_w");
      bump("head_b");
    }
    std::mt19937_64 gen(rng::mix(11));
    const TokenRow row = random_token_row(gen, 5);
    const double target = 0.8;

    auto loss_eval = [&]() {
      ad::Tape tape(&model.params());
      const int pred = model.forward(tape, row, nullptr).output;
      const int t = tape.constant(Tensor::scalar(target));
      return tape.value(tape.square(tape.sub(t, pred))).data[0];
    };
    ad::Tape tape(&model.params());
    const int pred = model.forward(tape, row, nullptr).output;
    const int t = tape.constant(Tensor::scalar(target));
    tape.backward(tape.square(tape.sub(t, pred)));
    std::vector<double> analytic(model.params().total_scalars(), 0.0);
    tape.export_param_grads(analytic, 1.0);

    OracleReport rep;
    rep.check = "grad_fd_proposed";
    rep.instance = "5 tokens, d=8, 1 layer, 2 heads";
    rep.tolerance = 1e-4;
    const FdCheck fd = finite_difference_grads(loss_eval, model.params(), analytic);
    rep.main_value = fd.max_rel_error;
    rep.discrepancy = fd.max_rel_error;
    rep.pass = fd.max_rel_error < 1e-4;
    sum.reports.push_back(rep);
  }
  {
    GrudConfig cfg;
    cfg.hidden = 6;
    cfg.dropout = 0.0;
    GrudModel model(cfg, 13);
    {
      auto& store = model.params();
      Tensor& t = store.at(store.find("head_w")).value;
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = 0.1 * static_cast<double>(i % 5) - 0.2;
    }
    std::mt19937_64 gen(rng::mix(12));
    History h;
    for (int j = 0; j < 8; ++j)
      h.triplets.push_back({-rng::uniform(gen, 0.0, 6.0), 1 + static_cast<int>(rng::below(gen, vocab::kCount - 1)),
                            rng::gaussian(gen, 0.0, 1.0)});
    TrainStats stats;
    stats.mean.fill(0.0);
    stats.sd.fill(1.0);
    const RegularGridSeries series = to_regular_grid(h, std::vector<double>(static_cast<std::size_t>(cfg.n_vars), 0.0), stats, 121);
    const double target = -0.4;

    auto loss_eval = [&]() {
      ad::Tape tape(&model.params());
      const int pred = model.forward(tape, series, nullptr);
      const int t = tape.constant(Tensor::scalar(target));
      return tape.value(tape.square(tape.sub(t, pred))).data[0];
    };
    ad::Tape tape(&model.params());
    const int pred = model.forward(tape, series, nullptr);
    const int t = tape.constant(Tensor::scalar(target));
    tape.backward(tape.square(tape.sub(t, pred)));
    std::vector<double> analytic(model.params().total_scalars(), 0.0);
    tape.export_param_grads(analytic, 1.0);

    OracleReport rep;
    rep.check = "grad_fd_grud";
    rep.instance = "8 observations, hidden=6";
    rep.tolerance = 1e-4;
    const FdCheck fd = finite_difference_grads(loss_eval, model.params(), analytic);
    rep.main_value = fd.max_rel_error;
    rep.discrepancy = fd.max_rel_error;
    rep.pass = fd.max_rel_error < 1e-4;
    sum.reports.push_back(rep);
  }
  {
    StratsConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    cfg.attn_dropout = 0.0;
    StratsModel model(cfg, 17);
    {
      auto& store = model.encoder().params();
      Tensor& t = store.at(store.find("head_w")).value;
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = 0.07 * static_cast<double>(i % 3) - 0.05;
    }
    std::mt19937_64 gen(rng::mix(14));
    const TokenRow row = random_token_row(gen, 5);
    const double target = 0.3;

    auto loss_eval = [&]() {
      ad::Tape tape(&model.encoder().params());
      const int pred = model.encoder().forward(tape, row, nullptr).output;
      const int t = tape.constant(Tensor::scalar(target));
      return tape.value(tape.square(tape.sub(t, pred))).data[0];
    };
    ad::Tape tape(&model.encoder().params());
    const int pred = model.encoder().forward(tape, row, nullptr).output;
    const int t = tape.constant(Tensor::scalar(target));
    tape.backward(tape.square(tape.sub(t, pred)));
    std::vector<double> analytic(model.encoder().params().total_scalars(), 0.0);
    tape.export_param_grads(analytic, 1.0);

    OracleReport rep;
    rep.check = "grad_fd_strats";
    rep.instance = "5 tokens, d=8, 1 layer, 2 heads";
    rep.tolerance = 1e-4;
    const FdCheck fd = finite_difference_grads(loss_eval, model.encoder().params(), analytic);
    rep.main_value = fd.max_rel_error;
    rep.discrepancy = fd.max_rel_error;
    rep.pass = fd.max_rel_error < 1e-4;
    sum.reports.push_back(rep);
  }

  // 3. Proposition 3-4 sweep
  {
    const auto reports = monotonicity_suite(seed ^ 0x6d6f6eULL, 1000);
    OracleReport agg;
    agg.check = "attention_monotonicity_suite";
    agg.tolerance = 1e-6;
    int fails = 0;
    double worst = 0.0;
    for (const auto& r : reports) {
      if (!r.pass) ++fails;
      worst = std::max(worst, r.discrepancy);
    }
    agg.instance = "1000 randomized instances, d in {0,0.5,...,36}";
    agg.main_value = static_cast<double>(fails);
    agg.oracle_value = worst;
    agg.discrepancy = worst;
    agg.pass = fails == 0;
    sum.reports.push_back(agg);
  }

  // 4. Proposition 5 probe
  {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    cfg.attn_dropout = 0.0;
    GapTransformer model(cfg, EncoderStyle::kGapResidual, 23);
    {
      auto& store = model.params();
      std::mt19937_64 hg(rng::mix(29));
      Tensor& hw = store.at(store.find("head_w")).value;
      for (double& v : hw.data) v = rng::gaussian(hg, 0.0, 0.3);
    }
    std::mt19937_64 gen(rng::mix(31));
    std::vector<TokenRow> bases;
    for (int i = 0; i < 25; ++i) bases.push_back(random_token_row(gen, 4 + static_cast<int>(rng::below(gen, 8))));
    const std::vector<double> scales{1e-1, 1e-2, 1e-3, 1e-4};
    const auto per_scale = stability_probe(model, bases, scales, 250, seed);
    sum.reports.push_back(stability_report(per_scale));
  }

  for (const auto& r : sum.reports) sum.all_pass = sum.all_pass && r.pass;
  return sum;
}

std::string verify_to_json(const VerifySummary& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : s.reports)
    arr.push_back({{"check", r.check},
                   {"instance", r.instance},
                   {"main_value", r.main_value},
                   {"oracle_value", r.oracle_value},
                   {"discrepancy", r.discrepancy},
                   {"tolerance", r.tolerance},
                   {"pass", r.pass}});
  return nlohmann::json{{"reports", std::move(arr)}, {"all_pass", s.all_pass}}.dump(2);
}

}  // namespace gapstride::oracles
