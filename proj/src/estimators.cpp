#include "oarf/estimators.hpp"

#include <omp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace oarf {

// ---------------------------------------------------------------------------
// Weights / IPTW
// ---------------------------------------------------------------------------

WeightVector ipt_weights(std::span<const double> e_hat, std::span<const int> d) {
  if (e_hat.size() != d.size()) throw std::invalid_argument("weights: length mismatch");
  WeightVector w;
  w.tau.resize(e_hat.size());
  for (std::size_t i = 0; i < e_hat.size(); ++i) {
    const double e = e_hat[i];
    if (!(e > 0.0 && e < 1.0))
      throw std::invalid_argument("weights: propensity outside (0,1) at row " + std::to_string(i));
    w.tau[i] = d[i] == 1 ? 1.0 / e : 1.0 / (1.0 - e);
  }
  return w;
}

double hajek_from_weights(std::span<const double> tau, std::span<const int> d, std::span<const double> y) {
  double num1 = 0.0, den1 = 0.0, num0 = 0.0, den0 = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (d[i] == 1) {
      num1 += tau[i] * y[i];
      den1 += tau[i];
    } else {
      num0 += tau[i] * y[i];
      den0 += tau[i];
    }
  }
  if (den1 <= 0.0 || den0 <= 0.0) throw std::invalid_argument("iptw: a treatment arm is empty");
  return num1 / den1 - num0 / den0;
}

double iptw_ate(std::span<const double> e_hat, std::span<const int> d, std::span<const double> y) {
  if (e_hat.size() != d.size() || d.size() != y.size()) throw std::invalid_argument("iptw: length mismatch");
  const WeightVector w = ipt_weights(e_hat, d);
  return hajek_from_weights(w.tau, d, y);
}

namespace {

double wamd_on_columns(const std::function<double(int, int)>& x, int n, int p, std::span<const double> tau,
                       std::span<const int> d, std::span<const double> coef_weights) {
  double den1 = 0.0, den0 = 0.0;
  for (int i = 0; i < n; ++i) {
    if (d[static_cast<std::size_t>(i)] == 1)
      den1 += tau[static_cast<std::size_t>(i)];
    else
      den0 += tau[static_cast<std::size_t>(i)];
  }
  double total = 0.0;
  for (int j = 0; j < p; ++j) {
    double num1 = 0.0, num0 = 0.0;
    for (int i = 0; i < n; ++i) {
      if (d[static_cast<std::size_t>(i)] == 1)
        num1 += tau[static_cast<std::size_t>(i)] * x(i, j);
      else
        num0 += tau[static_cast<std::size_t>(i)] * x(i, j);
    }
    total += coef_weights[static_cast<std::size_t>(j)] * std::abs(num1 / den1 - num0 / den0);
  }
  return total;
}

}  // namespace

double wamd(const Dataset& data, const WeightVector& tau, std::span<const double> coef_weights) {
  if (tau.tau.size() != static_cast<std::size_t>(data.n()) ||
      coef_weights.size() != static_cast<std::size_t>(data.p()))
    throw std::invalid_argument("wamd: length mismatch");
  return wamd_on_columns([&](int i, int j) { return data.x(i, j); }, data.n(), data.p(), tau.tau, data.d,
                         coef_weights);
}

double interpolated_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(values.begin(), values.end());
  if (prob <= 0.0) return values.front();
  if (prob >= 1.0) return values.back();
  const double h = static_cast<double>(values.size() - 1) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

CrossFitPlan CrossFitPlan::make(const Dataset& data, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("cross-fit: need k >= 2 folds");
  const int n = data.n();
  std::vector<int> treated, control;
  for (int i = 0; i < n; ++i)
    (data.d[static_cast<std::size_t>(i)] == 1 ? treated : control).push_back(i);
  if (static_cast<int>(treated.size()) < k || static_cast<int>(control.size()) < k)
    throw std::invalid_argument("cross-fit: each treatment class needs at least k observations");

  // Shuffle within class, deal round-robin: every fold keeps both classes.
  Rng rng(mix_seed(seed, 0xf01d));
  rng.shuffle(treated);
  rng.shuffle(control);
  CrossFitPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.fold_assignment.assign(static_cast<std::size_t>(n), 0);
  int next = 0;
  for (int r : treated) plan.fold_assignment[static_cast<std::size_t>(r)] = next++ % k;
  for (int r : control) plan.fold_assignment[static_cast<std::size_t>(r)] = next++ % k;
  return plan;
}

std::vector<int> CrossFitPlan::rows_in_fold(int f) const {
  std::vector<int> rows;
  for (std::size_t i = 0; i < fold_assignment.size(); ++i)
    if (fold_assignment[i] == f) rows.push_back(static_cast<int>(i));
  return rows;
}

std::vector<int> CrossFitPlan::rows_not_in_fold(int f) const {
  std::vector<int> rows;
  for (std::size_t i = 0; i < fold_assignment.size(); ++i)
    if (fold_assignment[i] != f) rows.push_back(static_cast<int>(i));
  return rows;
}

void CrossFitPlan::validate(const Dataset& data) const {
  if (fold_assignment.size() != static_cast<std::size_t>(data.n()))
    throw std::invalid_argument("cross-fit: fold assignment length mismatch");
  std::vector<int> n_treated(static_cast<std::size_t>(k), 0), n_control(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < fold_assignment.size(); ++i) {
    const int f = fold_assignment[i];
    if (f < 0 || f >= k) throw std::invalid_argument("cross-fit: fold index out of range");
    (data.d[i] == 1 ? n_treated : n_control)[static_cast<std::size_t>(f)]++;
  }
  for (int f = 0; f < k; ++f)
    if (n_treated[static_cast<std::size_t>(f)] == 0 || n_control[static_cast<std::size_t>(f)] == 0)
      throw std::invalid_argument("cross-fit: fold " + std::to_string(f) + " lacks a treatment class");
}

double cross_fit_ate(const Dataset& data, const CrossFitPlan& plan, const PropensityFitter& fitter, double clip_eps,
                     std::vector<double>* e_hat_out) {
  plan.validate(data);
  if (e_hat_out) e_hat_out->assign(static_cast<std::size_t>(data.n()), kNaN);
  double sum = 0.0;
  for (int f = 0; f < plan.k; ++f) {
    const std::vector<int> eval_rows = plan.rows_in_fold(f);
    const std::vector<int> train_rows = plan.rows_not_in_fold(f);
    std::vector<double> e = fitter(data, train_rows, eval_rows, mix_seed(plan.seed, static_cast<std::uint64_t>(f)));
    e = clip_probabilities(std::move(e), clip_eps, nullptr);
    std::vector<double> y_f;
    std::vector<int> d_f;
    y_f.reserve(eval_rows.size());
    d_f.reserve(eval_rows.size());
    for (int r : eval_rows) {
      y_f.push_back(data.y[static_cast<std::size_t>(r)]);
      d_f.push_back(data.d[static_cast<std::size_t>(r)]);
    }
    sum += iptw_ate(e, d_f, y_f);
    if (e_hat_out)
      for (std::size_t i = 0; i < eval_rows.size(); ++i)
        (*e_hat_out)[static_cast<std::size_t>(eval_rows[i])] = e[i];
  }
  return sum / static_cast<double>(plan.k);
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

namespace {

double log1pexp(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Standardized design with intercept; constant columns stay at zero.
Eigen::MatrixXd standardized_design(const Dataset& data, std::span<const int> columns) {
  const int n = data.n();
  const int m = static_cast<int>(columns.size());
  Eigen::MatrixXd X(n, m + 1);
  X.col(0).setOnes();
  for (int c = 0; c < m; ++c) {
    const int j = columns[static_cast<std::size_t>(c)];
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += data.x(i, j);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dv = data.x(i, j) - mean;
      var += dv * dv;
    }
    const double sd = std::sqrt(var / std::max(1, n - 1));
    for (int i = 0; i < n; ++i) X(i, c + 1) = sd > 0.0 ? (data.x(i, j) - mean) / sd : 0.0;
  }
  return X;
}

double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (int i = 0; i < eta.size(); ++i) ll += d(i) * eta(i) - log1pexp(eta(i));
  return ll;
}

}  // namespace

LogisticFit fit_logistic(const Dataset& data, std::span<const int> columns) {
  const int n = data.n();
  const Eigen::MatrixXd X = standardized_design(data, columns);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d(i) = static_cast<double>(data.d[static_cast<std::size_t>(i)]);

  const int m = static_cast<int>(X.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(m);
  constexpr double kGradTol = 1e-8;
  constexpr int kMaxIter = 100;
  bool converged = false;
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd p(n), w(n);
    for (int i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd g = X.transpose() * (d - p);
    if (g.norm() < kGradTol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal().array() += 1e-8;  // ridge jitter against rank deficiency
    const Eigen::VectorXd step = H.ldlt().solve(g);
    const double ll0 = logistic_loglik(X, d, beta);
    double t = 1.0;
    Eigen::VectorXd candidate = beta + step;
    for (int h = 0; h < 40 && logistic_loglik(X, d, candidate) < ll0; ++h) {
      t *= 0.5;
      candidate = beta + t * step;
    }
    beta = candidate;
  }
  if (!converged)
    throw std::runtime_error("logistic regression did not converge after " + std::to_string(iter) + " iterations");

  LogisticFit fit;
  fit.beta.assign(beta.data(), beta.data() + beta.size());
  fit.iterations = iter;
  fit.probabilities.resize(static_cast<std::size_t>(n));
  const Eigen::VectorXd eta = X * beta;
  for (int i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-eta(i)));
    fit.probabilities[static_cast<std::size_t>(i)] = p;
    if (p < 1e-6 || p > 1.0 - 1e-6) fit.separation_suspected = true;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Outcome-adaptive lasso
// ---------------------------------------------------------------------------

std::vector<double> default_oal_lambda_grid(int n) {
  constexpr int kPoints = 25;
  const double scale = std::pow(static_cast<double>(n), 0.6);
  std::vector<double> grid(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    const double exponent = -4.0 + 6.0 * static_cast<double>(i) / (kPoints - 1);  // 1e-4 .. 1e2
    grid[static_cast<std::size_t>(i)] = std::pow(10.0, exponent) * scale;
  }
  return grid;
}

double oal_gamma(double lambda, int n) {
  // lambda * n^(gamma/2 - 1) = n^2  =>  gamma = 6 - 2 ln(lambda)/ln(n)
  return 6.0 - 2.0 * std::log(lambda) / std::log(static_cast<double>(n));
}

double soft_threshold(double z, double threshold) {
  if (z > threshold) return z - threshold;
  if (z < -threshold) return z + threshold;
  return 0.0;
}

std::vector<double> outcome_ols_abs_coefficients(const Dataset& data) {
  const int n = data.n();
  const int p = data.p();
  std::vector<int> cols(static_cast<std::size_t>(p));
  std::iota(cols.begin(), cols.end(), 0);
  Eigen::MatrixXd Xs = standardized_design(data, cols);  // [1, X]
  Eigen::MatrixXd design(n, p + 2);                      // [1, D, X]
  design.col(0).setOnes();
  for (int i = 0; i < n; ++i) design(i, 1) = static_cast<double>(data.d[static_cast<std::size_t>(i)]);
  design.rightCols(p) = Xs.rightCols(p);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = data.y[static_cast<std::size_t>(i)];
  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(y);
  std::vector<double> abs_bt(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) abs_bt[static_cast<std::size_t>(j)] = std::abs(beta(j + 2));
  return abs_bt;
}

namespace {

struct ProxProblem {
  const Eigen::MatrixXd* X;  // [1, Xs]
  Eigen::VectorXd d;
  Eigen::VectorXd penalty;         // per-coefficient l1 weight; 0 = unpenalized
  std::vector<std::uint8_t> excl;  // hard-excluded coefficients stay at zero
};

double smooth_value(const ProxProblem& pb, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd eta = (*pb.X) * alpha;
  double v = 0.0;
  for (int i = 0; i < eta.size(); ++i) v += -pb.d(i) * eta(i) + log1pexp(eta(i));
  return v;
}

double penalty_value(const ProxProblem& pb, const Eigen::VectorXd& alpha) {
  double v = 0.0;
  for (int j = 0; j < alpha.size(); ++j)
    if (!pb.excl[static_cast<std::size_t>(j)]) v += pb.penalty(j) * std::abs(alpha(j));
  return v;
}

// Proximal gradient with backtracking on the logistic + weighted-l1
// objective. Stops when the objective decrease drops below tol.
Eigen::VectorXd prox_gradient(const ProxProblem& pb, double tol, int max_iter) {
  const int m = static_cast<int>(pb.X->cols());
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
  double t = 1.0;
  double obj = smooth_value(pb, alpha) + penalty_value(pb, alpha);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd eta = (*pb.X) * alpha;
    Eigen::VectorXd p(eta.size());
    for (int i = 0; i < eta.size(); ++i) p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
    const Eigen::VectorXd grad = pb.X->transpose() * (p - pb.d);
    const double f0 = smooth_value(pb, alpha);

    Eigen::VectorXd next(m);
    for (;;) {
      for (int j = 0; j < m; ++j) {
        if (pb.excl[static_cast<std::size_t>(j)]) {
          next(j) = 0.0;
          continue;
        }
        const double z = alpha(j) - t * grad(j);
        next(j) = pb.penalty(j) > 0.0 ? soft_threshold(z, t * pb.penalty(j)) : z;
      }
      const Eigen::VectorXd diff = next - alpha;
      const double quad = f0 + grad.dot(diff) + diff.squaredNorm() / (2.0 * t);
      if (smooth_value(pb, next) <= quad + 1e-12) break;
      t *= 0.5;
      if (t < 1e-12) break;
    }
    alpha = next;
    const double new_obj = smooth_value(pb, alpha) + penalty_value(pb, alpha);
    if (obj - new_obj < tol && iter > 0) break;
    obj = new_obj;
  }
  return alpha;
}

}  // namespace

OalFit fit_oal(const Dataset& data, const OalConfig& cfg) {
  const int n = data.n();
  const int p = data.p();
  const int treated = data.n_treated();
  if (treated == 0 || treated == n) throw std::invalid_argument("oal: both treatment classes must be present");
  if (cfg.max_iter < 1 || cfg.tol <= 0.0) throw std::invalid_argument("oal: invalid optimizer settings");

  // Step 1: outcome regression for adaptive weights.
  const std::vector<double> abs_bt = outcome_ols_abs_coefficients(data);

  std::vector<int> cols(static_cast<std::size_t>(p));
  std::iota(cols.begin(), cols.end(), 0);
  const Eigen::MatrixXd X = standardized_design(data, cols);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d(i) = static_cast<double>(data.d[static_cast<std::size_t>(i)]);

  const std::vector<double> grid = cfg.lambda_grid.empty() ? default_oal_lambda_grid(n) : cfg.lambda_grid;
  if (grid.empty()) throw std::invalid_argument("oal: empty lambda grid");
  for (double l : grid)
    if (l < 0.0) throw std::invalid_argument("oal: negative lambda");

  OalFit best;
  bool any_nonzero = false;
  for (double lambda : grid) {
    Eigen::VectorXd alpha;
    double gamma = kNaN;
    if (lambda == 0.0) {
      const LogisticFit lf = fit_logistic(data, cols);
      alpha = Eigen::Map<const Eigen::VectorXd>(lf.beta.data(), static_cast<Eigen::Index>(lf.beta.size()));
    } else {
      gamma = oal_gamma(lambda, n);
      if (gamma <= 1.0) continue;
      ProxProblem pb;
      pb.X = &X;
      pb.d = d;
      pb.penalty = Eigen::VectorXd::Zero(p + 1);
      pb.excl.assign(static_cast<std::size_t>(p + 1), 0);
      for (int j = 0; j < p; ++j) {
        const double bt = abs_bt[static_cast<std::size_t>(j)];
        const double omega = std::pow(bt, -gamma);
        if (bt == 0.0 || !std::isfinite(omega))
          pb.excl[static_cast<std::size_t>(j + 1)] = 1;  // infinite adaptive weight
        else
          pb.penalty(j + 1) = lambda * omega;
      }
      alpha = prox_gradient(pb, cfg.tol, cfg.max_iter);
    }

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(p), 0);
    int n_selected = 0;
    for (int j = 0; j < p; ++j)
      if (alpha(j + 1) != 0.0) {
        mask[static_cast<std::size_t>(j)] = 1;
        ++n_selected;
      }
    if (n_selected > 0) any_nonzero = true;

    const Eigen::VectorXd eta = X * alpha;
    std::vector<double> e(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) e[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-eta(i)));
    double clip_rate = 0.0;
    e = clip_probabilities(std::move(e), kPropensityClip, &clip_rate);
    const WeightVector tau = ipt_weights(e, data.d);
    const double balance =
        wamd_on_columns([&](int i, int j) { return X(i, j + 1); }, n, p, tau.tau, data.d, abs_bt);

    if (!std::isfinite(best.wamd_at_solution) || balance < best.wamd_at_solution) {
      best.wamd_at_solution = balance;
      best.best_lambda = lambda;
      best.best_gamma = gamma;
      best.e_hat = std::move(e);
      best.selected = std::move(mask);
      best.clip_rate = clip_rate;
    }
  }

  if (!std::isfinite(best.wamd_at_solution)) throw std::invalid_argument("oal: no usable lambda in grid");

  if (!any_nonzero) {
    // Entire grid shrank everything away: fall back to the plain logistic.
    const LogisticFit lf = fit_logistic(data, cols);
    best.fallback_unpenalized = true;
    best.e_hat = clip_probabilities(std::vector<double>(lf.probabilities), kPropensityClip, &best.clip_rate);
    best.selected.assign(static_cast<std::size_t>(p), 1);
    const WeightVector tau = ipt_weights(best.e_hat, data.d);
    best.wamd_at_solution =
        wamd_on_columns([&](int i, int j) { return X(i, j + 1); }, n, p, tau.tau, data.d, abs_bt);
  }

  best.theta = iptw_ate(best.e_hat, data.d, data.y);
  best.beta_tilde_abs = abs_bt;
  return best;
}

// ---------------------------------------------------------------------------
// DML
// ---------------------------------------------------------------------------

double dml_ate(const Dataset& data, const CrossFitPlan& plan, const OutcomeFitter& outcome_fitter,
               const PropensityFitter& propensity_fitter, double clip_eps) {
  plan.validate(data);
  double theta_sum = 0.0;
  for (int f = 0; f < plan.k; ++f) {
    const std::vector<int> eval_rows = plan.rows_in_fold(f);
    const std::vector<int> train_rows = plan.rows_not_in_fold(f);
    const std::uint64_t fold_seed = mix_seed(plan.seed, static_cast<std::uint64_t>(f));
    const std::vector<double> y_hat = outcome_fitter(data, train_rows, eval_rows, mix_seed(fold_seed, 1));
    std::vector<double> e_hat = propensity_fitter(data, train_rows, eval_rows, mix_seed(fold_seed, 2));
    e_hat = clip_probabilities(std::move(e_hat), clip_eps, nullptr);

    double sum_vu = 0.0, sum_vv = 0.0;
    for (std::size_t i = 0; i < eval_rows.size(); ++i) {
      const int r = eval_rows[i];
      const double u = data.y[static_cast<std::size_t>(r)] - y_hat[i];
      const double v = static_cast<double>(data.d[static_cast<std::size_t>(r)]) - e_hat[i];
      sum_vu += v * u;
      sum_vv += v * v;
    }
    if (sum_vv < 1e-10)
      throw std::runtime_error("dml: no treatment variation left after residualization in fold " + std::to_string(f));
    theta_sum += sum_vu / sum_vv;
  }
  return theta_sum / static_cast<double>(plan.k);
}

// ---------------------------------------------------------------------------
// Unified front end
// ---------------------------------------------------------------------------

namespace {

Matrix gather(const Matrix& x, std::span<const int> rows, std::span<const int> cols) {
  Matrix out(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
  for (int j = 0; j < out.cols(); ++j) {
    const int src = cols[static_cast<std::size_t>(j)];
    for (int i = 0; i < out.rows(); ++i) out(i, j) = x(rows[static_cast<std::size_t>(i)], src);
  }
  return out;
}

std::vector<double> gather_values(std::span<const double> v, std::span<const int> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[static_cast<std::size_t>(rows[i])];
  return out;
}

std::vector<int> all_columns(int p) {
  std::vector<int> cols(static_cast<std::size_t>(p));
  std::iota(cols.begin(), cols.end(), 0);
  return cols;
}

// Shared mutable scraps the fold fitters report back through.
struct FitTrace {
  std::vector<std::uint8_t> selected;
  bool degenerate_importance = false;

  void merge_mask(const std::vector<std::uint8_t>& mask, const std::vector<int>& cols) {
    if (selected.empty()) return;
    for (std::size_t c = 0; c < mask.size(); ++c)
      if (mask[c]) selected[static_cast<std::size_t>(cols[c])] = 1;
  }
};

// Plain bagged forest on a column subset; regression on the given target.
PropensityFitter make_plain_forest_fitter(const ForestConfig& fc, std::vector<int> columns, Target target,
                                          FitTrace* trace) {
  return [fc, columns = std::move(columns), target, trace](const Dataset& data, std::span<const int> train_rows,
                                                           std::span<const int> eval_rows,
                                                           std::uint64_t seed) -> std::vector<double> {
    const Matrix x_train = gather(data.x, train_rows, columns);
    const std::vector<double> t_full = target_values(data, target);
    const std::vector<double> t_train = gather_values(t_full, train_rows);
    ForestConfig cfg = fc;
    cfg.seed = seed;
    const Forest forest = train_forest(x_train, t_train, cfg);
    if (trace) trace->merge_mask(forest.features_used(), columns);
    const Matrix x_eval = gather(data.x, eval_rows, columns);
    return forest.predict_rows(x_eval);
  };
}

// Regularized forest driven by a fixed importance vector (or one refit on
// the training rows when imp is null).
PropensityFitter make_regularized_fitter(const ForestConfig& fc_prop, const ForestConfig& fc_outcome,
                                         const OarfOptions& oarf_opt, const ImportanceVector* imp, Target target,
                                         FitTrace* trace) {
  return [fc_prop, fc_outcome, oarf_opt, imp, target, trace](const Dataset& data, std::span<const int> train_rows,
                                                             std::span<const int> eval_rows,
                                                             std::uint64_t seed) -> std::vector<double> {
    const Dataset train = subset(data, train_rows);
    ImportanceVector local;
    const ImportanceVector* use = imp;
    if (!use) {
      ForestConfig fc1 = fc_outcome;
      fc1.seed = mix_seed(seed, 0xa11);
      local = outcome_importance(train, fc1);
      use = &local;
    }
    const std::vector<double> lambda = penalty_vector(*use, oarf_opt.penalty);
    FeatureSet fs0 = oarf_opt.use_initial_feature_set && !use->degenerate ? initial_feature_set(*use)
                                                                          : FeatureSet(data.p());
    ForestConfig cfg = fc_prop;
    cfg.seed = seed;
    const std::vector<double> t_train = target_values(train, target);
    RegularizedForest reg =
        train_regularized_forest(train.x, t_train, lambda, std::move(fs0), cfg, oarf_opt.penalty, oarf_opt.rule);
    if (trace) {
      trace->merge_mask(reg.forest.features_used(), all_columns(data.p()));
      trace->degenerate_importance = trace->degenerate_importance || use->degenerate;
    }
    const Matrix x_eval = gather(data.x, eval_rows, all_columns(data.p()));
    return reg.forest.predict_rows(x_eval);
  };
}

bool method_uses_crossfit(const std::string& method) {
  return method == "oarf" || method == "rrf" || method == "rf-full" || method == "rf-targ" || method == "dml-full" ||
         method == "dml-oarf" || method == "doarf";
}

double wamd_with_unit_weights(const Dataset& data, std::span<const double> e_hat) {
  const WeightVector tau = ipt_weights(e_hat, data.d);
  const std::vector<double> ones(static_cast<std::size_t>(data.p()), 1.0);
  return wamd(data, tau, ones);
}

}  // namespace

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {"oarf",   "rrf",    "rf-full", "rf-targ",  "logit",   "logit-targ",
                                                   "oal",    "oracle", "dml-full", "dml-oarf", "doarf"};
  return methods;
}

AteEstimate estimate_ate(const Dataset& data, const std::string& method, const EstimatorOptions& opt,
                         std::uint64_t seed) {
  data.validate();
  const int treated = data.n_treated();
  if (treated == 0 || treated == data.n())
    throw std::invalid_argument("estimate: both treatment classes must be present");

  AteEstimate est;
  est.method = method;
  const int p = data.p();

  const auto forest_importance = [&](std::uint64_t s) {
    ForestConfig fc1 = opt.fc_outcome;
    fc1.seed = s;
    return outcome_importance(data, fc1);
  };

  if (method == "oracle") {
    if (opt.true_propensity.size() != static_cast<std::size_t>(data.n()))
      throw std::invalid_argument("oracle method needs true propensities");
    std::vector<double> e = clip_probabilities(opt.true_propensity, opt.clip_eps, &est.diagnostics.clip_rate);
    est.theta = iptw_ate(e, data.d, data.y);
    est.diagnostics.wamd = wamd_with_unit_weights(data, e);
    return est;
  }

  if (method == "logit" || method == "logit-targ") {
    std::vector<int> cols = method == "logit" ? all_columns(p) : opt.target_features;
    if (cols.empty()) throw std::invalid_argument(method + ": no covariates given");
    const LogisticFit lf = fit_logistic(data, cols);
    std::vector<double> e = clip_probabilities(lf.probabilities, opt.clip_eps, &est.diagnostics.clip_rate);
    est.theta = iptw_ate(e, data.d, data.y);
    est.diagnostics.warn_clipping = lf.separation_suspected || est.diagnostics.clip_rate > 0.0;
    est.diagnostics.selected.assign(static_cast<std::size_t>(p), 0);
    for (int c : cols) est.diagnostics.selected[static_cast<std::size_t>(c)] = 1;
    const WeightVector tau = ipt_weights(e, data.d);
    est.diagnostics.wamd = wamd(data, tau, outcome_ols_abs_coefficients(data));
    return est;
  }

  if (method == "oal") {
    OalFit fit = fit_oal(data, opt.oal);
    est.theta = fit.theta;
    est.diagnostics.selected = fit.selected;
    est.diagnostics.wamd = fit.wamd_at_solution;
    est.diagnostics.clip_rate = fit.clip_rate;
    est.diagnostics.warn_clipping = fit.clip_rate > 0.0;
    est.diagnostics.warn_degenerate_importance = fit.fallback_unpenalized;
    return est;
  }

  if (!method_uses_crossfit(method)) throw std::invalid_argument("unknown method: " + method);

  const CrossFitPlan plan = CrossFitPlan::make(data, opt.crossfit_k, mix_seed(seed, 0x9a17));

  FitTrace trace;
  trace.selected.assign(static_cast<std::size_t>(p), 0);

  // Step-1 importance shared across folds (full-sample rule); refit inside
  // each fold when the ablation switch asks for auxiliary-only importance.
  ImportanceVector imp;
  const ImportanceVector* imp_ptr = nullptr;
  const bool needs_importance = method == "oarf" || method == "rrf" || method == "dml-oarf" || method == "doarf";
  if (needs_importance && opt.full_sample_importance) {
    imp = forest_importance(mix_seed(seed, 0x1));
    imp_ptr = &imp;
  }

  std::vector<double> e_pooled;
  if (method == "oarf" || method == "rrf" || method == "rf-full" || method == "rf-targ") {
    PropensityFitter fitter;
    if (method == "rf-full") {
      fitter = make_plain_forest_fitter(opt.fc_prop, all_columns(p), Target::treatment, &trace);
    } else if (method == "rf-targ") {
      if (opt.target_features.empty()) throw std::invalid_argument("rf-targ: no target features given");
      fitter = make_plain_forest_fitter(opt.fc_prop, opt.target_features, Target::treatment, &trace);
    } else {
      OarfOptions oo = opt.oarf;
      if (method == "rrf") {
        // Plain guided-RRF contrast: flat penalty only, no initial feature
        // set, no entry bar.
        oo.use_initial_feature_set = false;
        oo.rule = EntryRule::positive_gain;
        oo.penalty.depth_penalty = false;
      }
      fitter = make_regularized_fitter(opt.fc_prop, opt.fc_outcome, oo, imp_ptr, Target::treatment, &trace);
    }
    est.theta = cross_fit_ate(data, plan, fitter, opt.clip_eps, &e_pooled);
  } else {
    // DML variants: residual-on-residual with out-of-fold nuisances.
    PropensityFitter prop_fitter;
    OutcomeFitter outcome_fitter;
    if (method == "dml-full") {
      prop_fitter = make_plain_forest_fitter(opt.fc_prop, all_columns(p), Target::treatment, &trace);
      outcome_fitter = make_plain_forest_fitter(opt.fc_prop, all_columns(p), Target::outcome, nullptr);
    } else if (method == "dml-oarf") {
      prop_fitter = make_regularized_fitter(opt.fc_prop, opt.fc_outcome, opt.oarf, imp_ptr, Target::treatment, &trace);
      outcome_fitter = make_plain_forest_fitter(opt.fc_prop, all_columns(p), Target::outcome, nullptr);
    } else {  // doarf: outcome-adaptive regularization on both nuisances
      prop_fitter = make_regularized_fitter(opt.fc_prop, opt.fc_outcome, opt.oarf, imp_ptr, Target::treatment, &trace);
      outcome_fitter = make_regularized_fitter(opt.fc_prop, opt.fc_outcome, opt.oarf, imp_ptr, Target::outcome, nullptr);
    }
    est.theta = dml_ate(data, plan, outcome_fitter, prop_fitter, opt.clip_eps);
  }

  est.diagnostics.selected = trace.selected;
  est.diagnostics.warn_degenerate_importance = trace.degenerate_importance || (imp_ptr && imp.degenerate);

  if (!e_pooled.empty()) {
    int clipped = 0;
    for (double e : e_pooled)
      if (e <= opt.clip_eps || e >= 1.0 - opt.clip_eps) ++clipped;
    est.diagnostics.clip_rate = static_cast<double>(clipped) / static_cast<double>(e_pooled.size());
    const WeightVector tau = ipt_weights(e_pooled, data.d);
    if (needs_importance && imp_ptr)
      est.diagnostics.wamd = wamd(data, tau, imp.normalized);
    else
      est.diagnostics.wamd = wamd_with_unit_weights(data, e_pooled);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

BootstrapResult bootstrap_ci(const Dataset& data, const std::string& method, const EstimatorOptions& opt, int n_boot,
                             double alpha, std::uint64_t seed) {
  if (n_boot < 20) throw std::invalid_argument("bootstrap: need at least 20 replicates");
  const int n = data.n();
  const int needed_per_class = method_uses_crossfit(method) ? opt.crossfit_k : 1;

  std::vector<double> estimates(static_cast<std::size_t>(n_boot), kNaN);
  std::vector<std::vector<std::uint8_t>> masks(static_cast<std::size_t>(n_boot));
  std::exception_ptr error;

  const int threads = resolve_threads(opt.fc_prop.num_threads);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int b = 0; b < n_boot; ++b) {
    try {
      Rng rng(mix_seed(seed, 0xb007 + static_cast<std::uint64_t>(b)));
      std::vector<int> rows(static_cast<std::size_t>(n));
      bool ok = false;
      for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        int nt = 0;
        for (int& r : rows) {
          r = rng.uniform_int(n);
          nt += data.d[static_cast<std::size_t>(r)];
        }
        ok = nt >= needed_per_class && (n - nt) >= needed_per_class;
      }
      if (!ok) throw std::runtime_error("bootstrap: resample kept missing a treatment class after 10 retries");

      Dataset resample = subset(data, rows);
      EstimatorOptions opt_b = opt;
      if (!opt.true_propensity.empty()) opt_b.true_propensity = gather_values(opt.true_propensity, rows);
      const AteEstimate est = estimate_ate(resample, method, opt_b, mix_seed(seed, 0xe57 + static_cast<std::uint64_t>(b)));
      estimates[static_cast<std::size_t>(b)] = est.theta;
      masks[static_cast<std::size_t>(b)] = est.diagnostics.selected;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  BootstrapResult out;
  out.estimates = estimates;
  out.lower = interpolated_quantile(estimates, alpha / 2.0);
  out.upper = interpolated_quantile(estimates, 1.0 - alpha / 2.0);
  if (!masks.empty() && !masks.front().empty()) {
    out.selection_proportion.assign(masks.front().size(), 0.0);
    for (const auto& m : masks)
      for (std::size_t j = 0; j < m.size(); ++j) out.selection_proportion[j] += m[j];
    for (double& v : out.selection_proportion) v /= static_cast<double>(n_boot);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tuning
// ---------------------------------------------------------------------------

TuneResult tune_oarf(const Dataset& data, std::span<const TuneGridPoint> grid, const EstimatorOptions& base,
                     std::uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("tune: empty grid");
  ForestConfig fc1 = base.fc_outcome;
  fc1.seed = mix_seed(seed, 0x1);
  const ImportanceVector imp = outcome_importance(data, fc1);

  TuneResult result;
  bool have_best = false;
  for (const TuneGridPoint& gp : grid) {
    ForestConfig fc = base.fc_prop;
    fc.mtry = gp.mtry;
    fc.min_node_size = gp.min_node_size;
    fc.num_trees = gp.num_trees;
    fc.seed = mix_seed(seed, 0x2);
    const PropensityFit fit = fit_regularized_propensity(data, imp, fc, base.oarf);
    const WeightVector tau = ipt_weights(fit.e_hat, data.d);
    const double balance = wamd(data, tau, imp.normalized);
    result.table.emplace_back(gp, balance);
    const bool better =
        !have_best || balance < result.best_wamd ||
        (balance == result.best_wamd && (gp.mtry < result.best.mtry ||
                                         (gp.mtry == result.best.mtry && gp.min_node_size < result.best.min_node_size)));
    if (better) {
      result.best = gp;
      result.best_wamd = balance;
      have_best = true;
    }
  }
  return result;
}

}  // namespace oarf
