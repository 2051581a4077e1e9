#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oarf/estimators.hpp"
#include "oarf/simlab.hpp"

using namespace oarf;

namespace {

Dataset noise_dataset(int n, int p, std::uint64_t seed, double treat_logit_scale = 0.0) {
  Rng rng(seed);
  Dataset data;
  data.x = Matrix(n, p);
  data.y.resize(static_cast<std::size_t>(n));
  data.d.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) data.x(i, j) = rng.normal();
    const double a = treat_logit_scale * data.x(i, 0);
    data.d[static_cast<std::size_t>(i)] = rng.bernoulli(1.0 / (1.0 + std::exp(-a))) ? 1 : 0;
    data.y[static_cast<std::size_t>(i)] = rng.normal();
  }
  for (int j = 0; j < p; ++j) data.col_meta.push_back({"X" + std::to_string(j + 1), ColumnKind::continuous});
  return data;
}

}  // namespace

TEST_CASE("iptw matches hand-computed values") {
  {
    // constant propensity reduces to the difference in arm means
    const std::vector<double> e = {0.5, 0.5, 0.5, 0.5};
    const std::vector<int> d = {1, 1, 0, 0};
    const std::vector<double> y = {3.0, 5.0, 1.0, 2.0};
    CHECK(iptw_ate(e, d, y) == doctest::Approx(4.0 - 1.5));
  }
  {
    const std::vector<double> e = {0.8, 0.4, 0.5, 0.2};
    const std::vector<int> d = {1, 1, 0, 0};
    const std::vector<double> y = {2.0, 4.0, 1.0, 3.0};
    CHECK(iptw_ate(e, d, y) == doctest::Approx(10.0 / 3.0 - 23.0 / 13.0));
  }
  {
    const std::vector<double> e = {0.3, 0.9, 0.6, 0.2};
    const std::vector<int> d = {1, 0, 1, 0};
    const std::vector<double> y = {7.0, 7.0, 7.0, 7.0};
    CHECK(iptw_ate(e, d, y) == doctest::Approx(0.0));
  }
  {
    const std::vector<double> e = {1.0, 0.5};
    const std::vector<int> d = {1, 0};
    const std::vector<double> y = {1.0, 2.0};
    CHECK_THROWS(iptw_ate(e, d, y));  // boundary propensity is upstream's bug
  }
}

TEST_CASE("hajek estimate is invariant to rescaling the weights") {
  Rng rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 30 + rng.uniform_int(50);
    std::vector<double> e(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    std::vector<int> d(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      e[static_cast<std::size_t>(i)] = 0.05 + 0.9 * rng.uniform();
      d[static_cast<std::size_t>(i)] = i < n / 2 ? 1 : 0;
      y[static_cast<std::size_t>(i)] = rng.normal();
    }
    WeightVector w = ipt_weights(e, d);
    for (double tau : w.tau) CHECK(tau >= 1.0);
    const double theta = hajek_from_weights(w.tau, d, y);
    const double c = 0.1 + 10.0 * rng.uniform();
    std::vector<double> scaled = w.tau;
    for (double& t : scaled) t *= c;
    CHECK(std::abs(hajek_from_weights(scaled, d, y) - theta) < 1e-12);
  }
}

TEST_CASE("cross-fitting averages the per-fold estimates exactly") {
  Dataset data = noise_dataset(160, 3, 7);
  const CrossFitPlan plan = CrossFitPlan::make(data, 4, 99);
  plan.validate(data);

  // Constant-propensity fitter: fold estimates are plain arm-mean gaps.
  const PropensityFitter fitter = [](const Dataset&, std::span<const int>, std::span<const int> eval_rows,
                                     std::uint64_t) {
    return std::vector<double>(eval_rows.size(), 0.5);
  };
  const double theta = cross_fit_ate(data, plan, fitter, 0.01);

  double expected = 0.0;
  for (int f = 0; f < plan.k; ++f) {
    double m1 = 0.0, m0 = 0.0;
    int n1 = 0, n0 = 0;
    for (int r : plan.rows_in_fold(f)) {
      if (data.d[static_cast<std::size_t>(r)] == 1) {
        m1 += data.y[static_cast<std::size_t>(r)];
        ++n1;
      } else {
        m0 += data.y[static_cast<std::size_t>(r)];
        ++n0;
      }
    }
    expected += m1 / n1 - m0 / n0;
  }
  expected /= plan.k;
  CHECK(theta == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross-fit plans keep both classes in every fold or fail loudly") {
  Dataset data = noise_dataset(60, 2, 3);
  const CrossFitPlan plan = CrossFitPlan::make(data, 3, 1);
  std::vector<int> seen(static_cast<std::size_t>(data.n()), 0);
  for (int f = 0; f < 3; ++f)
    for (int r : plan.rows_in_fold(f)) seen[static_cast<std::size_t>(r)]++;
  for (int c : seen) CHECK(c == 1);

  Dataset tiny = noise_dataset(20, 2, 5);
  std::fill(tiny.d.begin(), tiny.d.end(), 0);
  tiny.d[0] = 1;  // one treated observation cannot stock two folds
  CHECK_THROWS(CrossFitPlan::make(tiny, 2, 1));
}

TEST_CASE("interpolated quantiles follow the linear order-statistic rule") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(interpolated_quantile(v, 0.025) == doctest::Approx(3.475));
  CHECK(interpolated_quantile(v, 0.975) == doctest::Approx(97.525));
  CHECK(interpolated_quantile({5.0, 5.0, 5.0}, 0.025) == doctest::Approx(5.0));
  CHECK(interpolated_quantile({2.0}, 0.9) == doctest::Approx(2.0));
}

TEST_CASE("wamd is zero for zero weights and balanced arms, matches a hand table") {
  Dataset data;
  data.x = Matrix(4, 2);
  // identical covariate pairs in both arms: exact balance
  const double rows[4][2] = {{1.0, 2.0}, {3.0, -1.0}, {1.0, 2.0}, {3.0, -1.0}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) data.x(i, j) = rows[i][j];
  data.y = {0, 0, 0, 0};
  data.d = {1, 1, 0, 0};
  data.col_meta = {{"a", ColumnKind::continuous}, {"b", ColumnKind::continuous}};

  WeightVector unit;
  unit.tau.assign(4, 1.0);
  const std::vector<double> w = {0.7, 1.3};
  CHECK(wamd(data, unit, w) == doctest::Approx(0.0));

  const std::vector<double> zero = {0.0, 0.0};
  data.x(0, 0) = 10.0;  // unbalance
  CHECK(wamd(data, unit, zero) == doctest::Approx(0.0));

  // hand computation with uneven weights
  WeightVector tau;
  tau.tau = {2.0, 1.0, 1.0, 3.0};
  // treated means: a: (2*10+1*3)/3, b: (2*2+1*(-1))/3 ; control: a: (1+3*3)/4, b: (2-3)/4
  const double a_gap = std::abs(23.0 / 3.0 - 10.0 / 4.0);
  const double b_gap = std::abs(1.0 - (-0.25));
  CHECK(wamd(data, tau, w) == doctest::Approx(0.7 * a_gap + 1.3 * b_gap));
}

TEST_CASE("logistic regression recovers the null model and survives separation") {
  {
    Dataset data = noise_dataset(400, 3, 11);
    std::vector<int> cols = {0, 1, 2};
    const LogisticFit fit = fit_logistic(data, cols);
    const double frac = static_cast<double>(data.n_treated()) / data.n();
    for (double prob : fit.probabilities) CHECK(std::abs(prob - frac) < 0.15);
    CHECK_FALSE(fit.separation_suspected);

    const AteEstimate est = estimate_ate(data, "logit", EstimatorOptions{}, 5);
    double m1 = 0, m0 = 0;
    int n1 = 0, n0 = 0;
    for (int i = 0; i < data.n(); ++i) {
      if (data.d[static_cast<std::size_t>(i)]) {
        m1 += data.y[static_cast<std::size_t>(i)];
        ++n1;
      } else {
        m0 += data.y[static_cast<std::size_t>(i)];
        ++n0;
      }
    }
    CHECK(std::abs(est.theta - (m1 / n1 - m0 / n0)) < 0.05);
  }
  {
    // perfectly separable treatment
    Dataset data = noise_dataset(80, 2, 13);
    for (int i = 0; i < data.n(); ++i) data.d[static_cast<std::size_t>(i)] = data.x(i, 0) > 0.0 ? 1 : 0;
    const LogisticFit fit = fit_logistic(data, std::vector<int>{0, 1});
    CHECK(fit.separation_suspected);
    const AteEstimate est = estimate_ate(data, "logit", EstimatorOptions{}, 5);
    CHECK(std::isfinite(est.theta));
    CHECK(est.diagnostics.warn_clipping);
  }
}

TEST_CASE("soft threshold satisfies its optimality conditions") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const double z = 4.0 * rng.normal();
    const double thr = std::abs(rng.normal());
    const double v = soft_threshold(z, thr);
    if (v > 0.0)
      CHECK(std::abs((v - z) + thr) < 1e-12);
    else if (v < 0.0)
      CHECK(std::abs((v - z) - thr) < 1e-12);
    else
      CHECK(std::abs(z) <= thr + 1e-12);
  }
}

TEST_CASE("oal gamma relation and default grid") {
  const int n = 500;
  for (double lambda : default_oal_lambda_grid(n)) {
    CHECK(lambda > 0.0);
    const double gamma = oal_gamma(lambda, n);
    CHECK(gamma > 1.0);
    // lambda * n^(gamma/2 - 1) == n^2
    CHECK(std::log(lambda) + (gamma / 2.0 - 1.0) * std::log(n) == doctest::Approx(2.0 * std::log(n)));
  }
  CHECK(default_oal_lambda_grid(n).size() == 25);
}

TEST_CASE("oal with a zero-lambda grid is a plain logistic fit") {
  Dataset data = noise_dataset(300, 4, 19, 1.0);
  for (int i = 0; i < data.n(); ++i)
    data.y[static_cast<std::size_t>(i)] = 0.8 * data.x(i, 0) + 0.5 * data.x(i, 1) + data.y[static_cast<std::size_t>(i)];
  OalConfig cfg;
  cfg.lambda_grid = {0.0};
  const OalFit fit = fit_oal(data, cfg);
  for (std::uint8_t s : fit.selected) CHECK(s == 1);
  CHECK(std::isfinite(fit.theta));
}

TEST_CASE("oal drops covariates with zero outcome coefficients and finds linear signal") {
  // X0 drives treatment and outcome; X1 drives outcome; X2, X3 noise; X4 constant.
  Rng rng(23);
  const int n = 500;
  Dataset data;
  data.x = Matrix(n, 5);
  data.y.resize(static_cast<std::size_t>(n));
  data.d.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) data.x(i, j) = rng.normal();
    data.x(i, 4) = 1.0;  // constant: standardized away, OLS coefficient exactly zero
    const double a = 1.2 * data.x(i, 0);
    data.d[static_cast<std::size_t>(i)] = rng.bernoulli(1.0 / (1.0 + std::exp(-a))) ? 1 : 0;
    data.y[static_cast<std::size_t>(i)] = 0.5 * data.d[static_cast<std::size_t>(i)] + 0.9 * data.x(i, 0) +
                                          0.9 * data.x(i, 1) + rng.normal();
  }
  for (int j = 0; j < 5; ++j) data.col_meta.push_back({"X" + std::to_string(j + 1), ColumnKind::continuous});

  const OalFit fit = fit_oal(data, OalConfig{});
  CHECK(fit.selected[0]);
  CHECK(fit.selected[1]);
  CHECK_FALSE(fit.selected[4]);
  CHECK(fit.beta_tilde_abs[4] == doctest::Approx(0.0));
  CHECK(std::isfinite(fit.wamd_at_solution));
  CHECK(std::abs(fit.theta - 0.5) < 0.35);
}

TEST_CASE("dml residual estimator with oracle nuisances is nearly unbiased") {
  const double theta = 0.7;
  double bias_sum = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(300 + s));
    const int n = 2000;
    Dataset data;
    data.x = Matrix(n, 2);
    data.y.resize(static_cast<std::size_t>(n));
    data.d.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      data.x(i, 0) = rng.normal();
      data.x(i, 1) = rng.normal();
      data.d[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
      data.y[static_cast<std::size_t>(i)] = theta * data.d[static_cast<std::size_t>(i)] + rng.normal();
    }
    data.col_meta = {{"a", ColumnKind::continuous}, {"b", ColumnKind::continuous}};

    const CrossFitPlan plan = CrossFitPlan::make(data, 2, static_cast<std::uint64_t>(s));
    const OutcomeFitter ell = [](const Dataset&, std::span<const int>, std::span<const int> eval,
                                 std::uint64_t) { return std::vector<double>(eval.size(), 0.0); };
    const PropensityFitter e_oracle = [](const Dataset&, std::span<const int>, std::span<const int> eval,
                                         std::uint64_t) { return std::vector<double>(eval.size(), 0.5); };
    bias_sum += dml_ate(data, plan, ell, e_oracle, 0.01) - theta;
  }
  CHECK(std::abs(bias_sum / seeds) < 0.05);
}

TEST_CASE("dml rejects degenerate residualized treatment") {
  Dataset data = noise_dataset(100, 2, 31);
  const CrossFitPlan plan = CrossFitPlan::make(data, 2, 1);
  const OutcomeFitter ell = [](const Dataset&, std::span<const int>, std::span<const int> eval, std::uint64_t) {
    return std::vector<double>(eval.size(), 0.0);
  };
  const PropensityFitter leak = [&](const Dataset& d, std::span<const int>, std::span<const int> eval,
                                    std::uint64_t) {
    std::vector<double> e;
    for (int r : eval) e.push_back(static_cast<double>(d.d[static_cast<std::size_t>(r)]));
    return e;
  };
  CHECK_THROWS(dml_ate(data, plan, ell, leak, 0.0));
}

TEST_CASE("bootstrap percentile interval is deterministic and collapses for constants") {
  Dataset data = noise_dataset(120, 2, 37);
  std::fill(data.y.begin(), data.y.end(), 3.0);  // constant outcome: every resample gives 0
  EstimatorOptions opt;
  opt.true_propensity.assign(static_cast<std::size_t>(data.n()), 0.5);

  const BootstrapResult a = bootstrap_ci(data, "oracle", opt, 40, 0.05, 2024);
  CHECK(a.lower == doctest::Approx(0.0));
  CHECK(a.upper == doctest::Approx(0.0));

  const BootstrapResult b = bootstrap_ci(data, "oracle", opt, 40, 0.05, 2024);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.estimates == b.estimates);

  CHECK_THROWS(bootstrap_ci(data, "oracle", opt, 10, 0.05, 1));  // too few draws
}

TEST_CASE("estimate_ate validates methods and oracle inputs") {
  Dataset data = noise_dataset(100, 2, 41);
  CHECK_THROWS(estimate_ate(data, "nonsense", EstimatorOptions{}, 1));
  CHECK_THROWS(estimate_ate(data, "oracle", EstimatorOptions{}, 1));  // no truth given
  CHECK_THROWS(estimate_ate(data, "rf-targ", EstimatorOptions{}, 1));  // no target features
}

TEST_CASE("forest methods are deterministic given a seed") {
  const DgpSpec spec = DgpSpec::for_setting(1, 200, 8);
  const GenData gen = generate(spec, 5);
  EstimatorOptions opt;
  opt.fc_outcome.num_trees = 40;
  opt.fc_prop.num_trees = 30;
  const AteEstimate a = estimate_ate(gen.data, "oarf", opt, 777);
  const AteEstimate b = estimate_ate(gen.data, "oarf", opt, 777);
  CHECK(a.theta == b.theta);
  CHECK(a.diagnostics.selected == b.diagnostics.selected);
  const AteEstimate c = estimate_ate(gen.data, "oarf", opt, 778);
  CHECK(a.theta != c.theta);
}

TEST_CASE("tuning returns the wamd-minimizing grid point with deterministic ties") {
  const DgpSpec spec = DgpSpec::for_setting(1, 200, 6);
  const GenData gen = generate(spec, 6);
  EstimatorOptions base;
  base.fc_outcome.num_trees = 60;

  const TuneGridPoint single{3, 15, 40};
  const TuneResult one = tune_oarf(gen.data, std::vector<TuneGridPoint>{single}, base, 9);
  CHECK(one.best.mtry == 3);
  CHECK(one.best.min_node_size == 15);
  CHECK(one.table.size() == 1);

  // Constant covariates permit no splits: every configuration produces the
  // same (empty) forest, wamd ties, and the tie-break picks the smallest
  // mtry then node size.
  Dataset flat;
  const int n = 80;
  flat.x = Matrix(n, 2);
  flat.y.resize(static_cast<std::size_t>(n));
  flat.d.resize(static_cast<std::size_t>(n));
  Rng rng(3);
  for (int i = 0; i < n; ++i) {
    flat.x(i, 0) = 1.0;
    flat.x(i, 1) = 0.0;
    flat.y[static_cast<std::size_t>(i)] = rng.normal();
    flat.d[static_cast<std::size_t>(i)] = i % 2;
  }
  flat.col_meta = {{"a", ColumnKind::binary}, {"b", ColumnKind::binary}};
  const std::vector<TuneGridPoint> grid = {{4, 30, 20}, {2, 40, 20}, {2, 10, 20}};
  const TuneResult tie = tune_oarf(flat, grid, base, 11);
  CHECK(tie.best.mtry == 2);
  CHECK(tie.best.min_node_size == 10);
}
