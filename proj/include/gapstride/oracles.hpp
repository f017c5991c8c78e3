#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gapstride/autodiff.hpp"
#include "gapstride/mixedfx.hpp"
#include "gapstride/model.hpp"

namespace gapstride::oracles {

struct OracleReport {
  std::string check;
  std::string instance;
  double main_value = 0.0;
  double oracle_value = 0.0;
  double discrepancy = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct DenseLmmResult {
  double beta0 = 0.0;
  std::vector<double> beta;
  double sigma2_b = 0.0;
  double sigma2_e = 0.0;
  double loglik = 0.0;
};

/// Exact Gaussian log-density of the random-intercept model over the full
/// marginal covariance sigma^2 I + sigma_b^2 block(1), maximized by a dense
/// 41x41 log-spaced grid with local refinement and GLS beta at each point.
/// Shares no numerical code path with fit_lmm.
DenseLmmResult lmm_dense_oracle(const LmmSpec& spec, const std::vector<AnchorSample>& samples);

/// Log-density evaluation alone, at fixed variance components.
double lmm_dense_loglik(const LmmSpec& spec, const std::vector<AnchorSample>& samples, double sigma2_b, double sigma2_e);

struct FdCheck {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t n_params = 0;
};

/// Central finite differences per parameter coordinate against the supplied
/// analytic gradient (flat, parameter-id order). loss_fn evaluates the loss
/// at the store's current values. Relative error uses |a-f|/max(1,|a|,|f|).
FdCheck finite_difference_grads(const std::function<double()>& loss_fn, ad::ParameterStore& params,
                                const std::vector<double>& analytic, double h = 1e-4);

/// One randomized Proposition-4 instance: key b with content score c_b and
/// gap d against fixed competitor scores.
struct AttentionInstance {
  double lambda = 0.0;
  double c_b = 0.0;
  std::vector<double> other_scores;
};

/// Evaluates alpha_b(d) over the grid through the real masked-softmax
/// primitive, asserts strict decrease (lambda > 0, >= 2 keys) or exact
/// constancy (lambda = 0), and checks the closed-form derivative
/// -lambda A z / (A + z)^2 against numerical differentiation.
OracleReport monotonicity_sweep(const AttentionInstance& inst, const std::vector<double>& d_grid, double deriv_tol = 1e-6);

std::vector<OracleReport> monotonicity_suite(std::uint64_t seed, int n_instances);

struct StabilityScaleReport {
  double scale = 0.0;
  double max_ratio = 0.0;
  int pairs = 0;
  int skipped = 0;
};

/// Empirical Lipschitz probe of the residual map in evaluation mode: random
/// token-row perturbations bounded by scale*(0.5 month, 0.1 SD); the ratio
/// |r(H)-r(H')| / d_H must not blow up as the scale shrinks.
std::vector<StabilityScaleReport> stability_probe(const GapTransformer& model, const std::vector<TokenRow>& base_rows,
                                                  const std::vector<double>& scales, int pairs_per_scale, std::uint64_t seed);

OracleReport stability_report(const std::vector<StabilityScaleReport>& per_scale, double blowup_factor = 10.0);

struct VerifySummary {
  std::vector<OracleReport> reports;
  bool all_pass = true;
};

/// The full oracle suite behind the `verify` command.
VerifySummary run_verification(std::uint64_t seed);

std::string verify_to_json(const VerifySummary& s);

}  // namespace gapstride::oracles
