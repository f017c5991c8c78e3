#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "gapstride/cohort.hpp"

namespace gapstride {

class RankDeficientError : public std::invalid_argument {
 public:
  RankDeficientError(std::string what, std::vector<std::string> collinear)
      : std::invalid_argument(std::move(what)), collinear_columns(std::move(collinear)) {}
  std::vector<std::string> collinear_columns;
};

struct LmmSpec {
  std::vector<std::string> fixed_effect_columns;  // intercept implicit
};

/// Random-intercept linear mixed model fitted by maximum likelihood on the
/// profiled variance ratio theta = sigma_b^2 / sigma_e^2. Coefficients are on
/// the standardized-covariate scale; the standardization is stored for
/// prediction.
struct LmmFit {
  std::vector<std::string> columns;
  double beta0 = 0.0;
  std::vector<double> beta;
  double sigma2_b = 0.0;
  double sigma2_e = 0.0;
  double loglik = 0.0;
  long n_train = 0;
  int q = 0;  // |beta| + intercept + two variance parameters
  double bic = 0.0;
  bool ols_degenerate = false;  // theta unidentified (all singleton groups)

  std::vector<double> col_mean, col_sd;  // per selected column
};

LmmFit fit_lmm(const LmmSpec& spec, const std::vector<AnchorSample>& samples);

double bic(const LmmFit& fit);

/// Forward stepwise over whole covariate blocks, deterministic in block
/// order; a block whose columns are collinear with the current design is
/// rejected through the rank-deficiency path and selection continues.
std::pair<LmmSpec, LmmFit> select_by_bic(const std::vector<std::pair<std::string, std::vector<std::string>>>& candidate_blocks,
                                         const std::vector<AnchorSample>& samples);

/// Marginal fixed-effect prediction beta0 + x' beta; the random intercept
/// enters as E(b_0i) = 0. x is a full CovariateSchema vector (NaN allowed).
double predict_fixed(const LmmFit& fit, const std::vector<double>& x);

std::string lmm_to_json(const LmmFit& fit);
LmmFit lmm_from_json(const std::string& json_text);

}  // namespace gapstride
