#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oarf/dataset.hpp"
#include "oarf/forest.hpp"
#include "oarf/oarf.hpp"

namespace oarf {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Weights and the IPTW estimator
// ---------------------------------------------------------------------------

struct WeightVector {
  std::vector<double> tau;  // D/e + (1-D)/(1-e), always >= 1
};

WeightVector ipt_weights(std::span<const double> e_hat, std::span<const int> d);

// Hajek difference of weighted arm means; invariant under rescaling tau.
double hajek_from_weights(std::span<const double> tau, std::span<const int> d, std::span<const double> y);

// Normalized IPTW. e_hat must lie strictly inside (0,1); clipping is the
// caller's job.
double iptw_ate(std::span<const double> e_hat, std::span<const int> d, std::span<const double> y);

// Weighted absolute mean difference: sum_j w_j |treated mean - control mean|
// of X_j under tau-weighted arm means.
double wamd(const Dataset& data, const WeightVector& tau, std::span<const double> coef_weights);

// Type-7 quantile (linear interpolation between order statistics).
double interpolated_quantile(std::vector<double> values, double prob);

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

struct CrossFitPlan {
  int k = 2;
  std::vector<int> fold_assignment;  // per-row fold in [0,k)
  std::uint64_t seed = 0;

  // Random assignment stratified by treatment so every fold keeps both
  // classes (throws when a class has fewer than k members).
  static CrossFitPlan make(const Dataset& data, int k, std::uint64_t seed);

  std::vector<int> rows_in_fold(int f) const;
  std::vector<int> rows_not_in_fold(int f) const;
  void validate(const Dataset& data) const;
};

// Fits a propensity model on train_rows and returns probabilities for
// eval_rows (unclipped).
using PropensityFitter = std::function<std::vector<double>(const Dataset& data, std::span<const int> train_rows,
                                                           std::span<const int> eval_rows, std::uint64_t seed)>;

// Per-fold IPTW on out-of-fold propensities, averaged over folds. When
// e_hat_out is given it receives the pooled out-of-fold (clipped)
// probabilities in row order.
double cross_fit_ate(const Dataset& data, const CrossFitPlan& plan, const PropensityFitter& fitter, double clip_eps,
                     std::vector<double>* e_hat_out = nullptr);

// ---------------------------------------------------------------------------
// Logistic regression baseline
// ---------------------------------------------------------------------------

struct LogisticFit {
  std::vector<double> beta;  // intercept first, standardized scale
  std::vector<double> probabilities;
  int iterations = 0;
  bool separation_suspected = false;
};

// Damped-Newton ML logistic regression of d on the given columns (with
// intercept; columns standardized internally). Gradient-norm tolerance
// 1e-8, at most 100 iterations; throws on non-convergence.
LogisticFit fit_logistic(const Dataset& data, std::span<const int> columns);

// ---------------------------------------------------------------------------
// Outcome-adaptive lasso baseline
// ---------------------------------------------------------------------------

struct OalConfig {
  std::vector<double> lambda_grid;  // empty: 25 log-spaced in [1e-4,1e2]*n^0.6
  double tol = 1e-7;
  int max_iter = 5000;
};

std::vector<double> default_oal_lambda_grid(int n);

// gamma solving lambda * n^(gamma/2 - 1) = n^2; must exceed 1.
double oal_gamma(double lambda, int n);

double soft_threshold(double z, double threshold);

struct OalFit {
  double theta = kNaN;
  std::vector<double> e_hat;             // clipped
  std::vector<std::uint8_t> selected;    // nonzero coefficients
  std::vector<double> beta_tilde_abs;    // |OLS outcome coefficients|, wAMD weights
  double best_lambda = kNaN;
  double best_gamma = kNaN;
  double wamd_at_solution = kNaN;
  bool fallback_unpenalized = false;
  double clip_rate = 0.0;
};

OalFit fit_oal(const Dataset& data, const OalConfig& cfg);

// |OLS coefficients| of Y on [1, D, X] (standardized X), covariate entries only.
std::vector<double> outcome_ols_abs_coefficients(const Dataset& data);

// ---------------------------------------------------------------------------
// Double machine learning
// ---------------------------------------------------------------------------

// Fits a conditional-mean model of the outcome on train_rows, returning
// predictions for eval_rows.
using OutcomeFitter = PropensityFitter;

// Residual-on-residual estimator with out-of-fold nuisances; per-fold
// theta = sum(V*U)/sum(V^2), averaged over folds. Throws when a fold's
// sum(V^2) falls below 1e-10.
double dml_ate(const Dataset& data, const CrossFitPlan& plan, const OutcomeFitter& outcome_fitter,
               const PropensityFitter& propensity_fitter, double clip_eps);

// ---------------------------------------------------------------------------
// Unified estimation front end
// ---------------------------------------------------------------------------

struct Diagnostics {
  double wamd = kNaN;
  double clip_rate = 0.0;
  std::vector<std::uint8_t> selected;
  bool warn_degenerate_importance = false;
  bool warn_clipping = false;
};

struct AteEstimate {
  double theta = kNaN;
  double ci_lower = kNaN;
  double ci_upper = kNaN;
  std::string method;
  int n_bootstrap = 0;
  Diagnostics diagnostics;
};

struct EstimatorOptions {
  ForestConfig fc_outcome;  // step-1 importance forest
  ForestConfig fc_prop;     // propensity (and DML nuisance) forests
  OarfOptions oarf;
  OalConfig oal;
  int crossfit_k = 2;          // forest-based methods; linear baselines fit once
  double clip_eps = kPropensityClip;
  std::vector<int> target_features;     // oracle X_c/X_o indices for *-targ methods
  std::vector<double> true_propensity;  // per-row e0 for the oracle method
  bool full_sample_importance = true;   // step 1 on the full sample vs auxiliary folds
};

// method: oarf | rrf | rf-full | rf-targ | logit | logit-targ | oal |
//         oracle | dml-full | dml-oarf | doarf
AteEstimate estimate_ate(const Dataset& data, const std::string& method, const EstimatorOptions& opt,
                         std::uint64_t seed);

const std::vector<std::string>& known_methods();

// ---------------------------------------------------------------------------
// Percentile bootstrap
// ---------------------------------------------------------------------------

struct BootstrapResult {
  double lower = kNaN;
  double upper = kNaN;
  std::vector<double> estimates;
  // Per-feature fraction of replicates selecting the feature (forest and
  // lasso methods; empty otherwise).
  std::vector<double> selection_proportion;
};

// Reruns the entire pipeline (including step-1 importance) on row
// resamples; resamples that cannot support the cross-fit plan are redrawn
// up to 10 times.
BootstrapResult bootstrap_ci(const Dataset& data, const std::string& method, const EstimatorOptions& opt, int n_boot,
                             double alpha, std::uint64_t seed);

// ---------------------------------------------------------------------------
// wAMD-based tuning
// ---------------------------------------------------------------------------

struct TuneGridPoint {
  int mtry = 0;
  int min_node_size = 0;
  int num_trees = 0;
};

struct TuneResult {
  TuneGridPoint best;
  double best_wamd = kNaN;
  std::vector<std::pair<TuneGridPoint, double>> table;
};

// Fits the outcome-adaptive pipeline per grid point and returns the
// wAMD-minimizing configuration (importance scores as balance weights);
// ties break to smaller mtry, then smaller node size.
TuneResult tune_oarf(const Dataset& data, std::span<const TuneGridPoint> grid, const EstimatorOptions& base,
                     std::uint64_t seed);

}  // namespace oarf
