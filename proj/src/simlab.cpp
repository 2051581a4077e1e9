#include "oarf/simlab.hpp"

#include <omp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace oarf {

DgpSpec DgpSpec::for_setting(int setting, int n, int p) {
  DgpSpec spec;
  spec.setting = setting;
  spec.n = n;
  spec.p = p;
  spec.validate();
  return spec;
}

double DgpSpec::effective_rho() const {
  if (rho >= 0.0) return rho;
  return (setting == 11 || setting == 12) ? 0.2 : 0.0;
}

std::vector<int> DgpSpec::target_features() const {
  // X_c = X_o = 2 except settings 8-10 where X_c = 6.
  const int hi = (setting >= 8 && setting <= 10) ? 8 : 4;
  std::vector<int> out(static_cast<std::size_t>(hi));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

void DgpSpec::validate() const {
  if (setting < 1 || setting > 15) throw std::invalid_argument("dgp: setting must be 1..15");
  if (n < 10) throw std::invalid_argument("dgp: n too small");
  const int min_p = (setting >= 8 && setting <= 10) ? 10 : 6;
  if (p < min_p)
    throw std::invalid_argument("dgp: setting " + std::to_string(setting) + " references X_" + std::to_string(min_p) +
                                ", need p >= " + std::to_string(min_p));
  if (theta != theta) throw std::invalid_argument("dgp: theta must be finite");
  const double r = effective_rho();
  if (r < 0.0 || r > 0.95) throw std::invalid_argument("dgp: rho must lie in [0, 0.95]");
}

namespace {

double indicator(bool b) { return b ? 1.0 : 0.0; }

// Treatment index a(x) per setting; x is the row vector (0-based columns).
double treatment_index(int setting, std::span<const double> x) {
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3], x5 = x[4], x6 = x[5];
  switch (setting) {
    case 1:
    case 3:
    case 11:
      return x1 + x2 + x5 + x6;
    case 2:
    case 12:
      return 0.4 * x1 + 0.4 * x2 + x5 + x6;
    case 4:
    case 13:
      return x1 * (1.0 - x2) + x5 * (1.0 - x6);
    case 5:
      return 0.8 * x1 * x2 + 0.8 * x5 * x6;
    case 6:
    case 14:
      return 2.0 * std::cos(x2) + x1 + x2 + x5 + x6;
    case 7:
    case 15:
      return 2.0 * indicator(x1 > 0.0) * indicator(x2 > 1.0) + 2.0 * indicator(x5 > 0.0) * indicator(x6 > 1.0) +
             x1 * x6;
    case 8:
      return 2.0 * x2 * (1.0 - x6) + 2.0 * x1 * indicator(x[8] > 1.0) + x1 + x2 + x3 + x4 + x5 + x6 + x[8] + x[9];
    case 9:
      return 0.5 * x1 * x1 + 0.5 * x2 - x3 * x4 + 0.5 * x5 + 0.5 * x6 + 0.5 * x[8] * x[8] + 0.5 * x[9];
    case 10:
      return -std::exp(x1) + 0.4 * x2 + std::exp(x3) + 0.4 * x4 + 0.5 * x5 * x5 + x6 * x[8] + 0.4 * x[9];
    default:
      throw std::invalid_argument("dgp: unknown setting");
  }
}

// Outcome contribution g(x) (theta*D and the noise are added by the caller).
double outcome_index(int setting, std::span<const double> x) {
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3], x5 = x[4], x6 = x[5];
  switch (setting) {
    case 1:
    case 2:
    case 11:
    case 12:
      return 0.6 * (x1 + x2 + x3 + x4);
    case 3:
    case 4:
    case 5:
    case 6:
    case 7:
      return 0.8 * x1 * x2 + 0.8 * x3 * x4;
    case 8:
    case 10:
      return 0.8 * x1 * x2 + 0.8 * x3 * x4 + 0.8 * x5 * x6 + 0.8 * x[6] * x[7];
    case 9:
      return x1 * x2 + x3 * x4 + 0.5 * x2 + 0.5 * x6 + x[6] * x[7];
    case 13:
      return x1 * (1.0 - x2) + x3 * (1.0 - x4);
    case 14:
      return 2.0 * std::cos(x2) + 0.6 * (x1 + x2 + x3 + x4);
    case 15:
      return 2.0 * indicator(x1 > 0.0) * indicator(x2 > 1.0) + 2.0 * indicator(x3 > 0.0) * indicator(x4 > 1.0) +
             x1 * x4;
    default:
      throw std::invalid_argument("dgp: unknown setting");
  }
}

}  // namespace

GenData generate(const DgpSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int n = spec.n;
  const int p = spec.p;
  const double rho = spec.effective_rho();

  Rng rng(mix_seed(seed, 0xd67));

  // X = Z L^T with L the Cholesky factor of the equicorrelation matrix.
  Eigen::MatrixXd L;
  if (rho > 0.0) {
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(p, p, rho);
    sigma.diagonal().setOnes();
    L = sigma.llt().matrixL();
  }

  GenData out;
  out.data.x = Matrix(n, p);
  out.data.y.resize(static_cast<std::size_t>(n));
  out.data.d.resize(static_cast<std::size_t>(n));
  out.true_propensity.resize(static_cast<std::size_t>(n));
  out.data.col_meta.resize(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j)
    out.data.col_meta[static_cast<std::size_t>(j)] = {"X" + std::to_string(j + 1), ColumnKind::continuous};

  std::vector<double> z(static_cast<std::size_t>(p));
  std::vector<double> row(static_cast<std::size_t>(p));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) z[static_cast<std::size_t>(j)] = rng.normal();
    if (rho > 0.0) {
      for (int j = 0; j < p; ++j) {
        double s = 0.0;
        for (int k = 0; k <= j; ++k) s += L(j, k) * z[static_cast<std::size_t>(k)];
        row[static_cast<std::size_t>(j)] = s;
      }
    } else {
      row = z;
    }
    for (int j = 0; j < p; ++j) out.data.x(i, j) = row[static_cast<std::size_t>(j)];

    const double a = treatment_index(spec.setting, row);
    const double e0 = 1.0 / (1.0 + std::exp(-a));
    out.true_propensity[static_cast<std::size_t>(i)] = e0;
    out.data.d[static_cast<std::size_t>(i)] = rng.bernoulli(e0) ? 1 : 0;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) row[static_cast<std::size_t>(j)] = out.data.x(i, j);
    const double g = outcome_index(spec.setting, row);
    out.data.y[static_cast<std::size_t>(i)] =
        spec.theta * static_cast<double>(out.data.d[static_cast<std::size_t>(i)]) + g + rng.normal();
  }
  return out;
}

const MethodReplicates& McReport::replicates_for(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return m;
  throw std::invalid_argument("report: no method " + method);
}

McSummary McReport::summarize(const std::string& method) const {
  const MethodReplicates& rep = replicates_for(method);
  McSummary s;
  s.method = method;
  s.failures = rep.failures;
  s.seconds = rep.seconds;

  std::vector<double> ok;
  for (double t : rep.theta)
    if (std::isfinite(t)) ok.push_back(t);
  s.replicates = static_cast<int>(ok.size());
  if (ok.empty()) return s;

  const double mean = std::accumulate(ok.begin(), ok.end(), 0.0) / static_cast<double>(ok.size());
  s.mean_theta = mean;
  s.bias = mean - spec.theta;
  double var = 0.0, mse = 0.0;
  for (double t : ok) {
    var += (t - mean) * (t - mean);
    mse += (t - spec.theta) * (t - spec.theta);
  }
  s.variance = var / static_cast<double>(ok.size());
  s.mse = mse / static_cast<double>(ok.size());

  if (with_ci) {
    int covered = 0, have = 0;
    double width = 0.0;
    for (std::size_t r = 0; r < rep.theta.size(); ++r) {
      if (!std::isfinite(rep.ci_lo[r]) || !std::isfinite(rep.ci_hi[r])) continue;
      ++have;
      width += rep.ci_hi[r] - rep.ci_lo[r];
      if (rep.ci_lo[r] <= spec.theta && spec.theta <= rep.ci_hi[r]) ++covered;
    }
    if (have > 0) {
      s.coverage = static_cast<double>(covered) / static_cast<double>(have);
      s.mean_width = width / static_cast<double>(have);
    }
  }

  if (!rep.selected.empty()) {
    std::size_t p = 0;
    for (const auto& m : rep.selected) p = std::max(p, m.size());
    if (p > 0) {
      s.selection_proportion.assign(p, 0.0);
      int masks = 0;
      for (const auto& m : rep.selected) {
        if (m.empty()) continue;
        ++masks;
        for (std::size_t j = 0; j < m.size(); ++j) s.selection_proportion[j] += m[j];
      }
      if (masks > 0)
        for (double& v : s.selection_proportion) v /= static_cast<double>(masks);
    }
  }
  return s;
}

McReport run_monte_carlo(const DgpSpec& spec, const McOptions& opt) {
  spec.validate();
  if (opt.reps < 2) throw std::invalid_argument("monte carlo: need at least 2 replicates");
  if (opt.methods.empty()) throw std::invalid_argument("monte carlo: no methods given");
  for (const auto& m : opt.methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw std::invalid_argument("monte carlo: unknown method " + m);

  McReport report;
  report.spec = spec;
  report.reps = opt.reps;
  report.with_ci = opt.with_ci;
  report.seed = opt.seed;
  report.methods.resize(opt.methods.size());
  for (std::size_t m = 0; m < opt.methods.size(); ++m) {
    auto& mr = report.methods[m];
    mr.method = opt.methods[m];
    mr.theta.assign(static_cast<std::size_t>(opt.reps), kNaN);
    mr.ci_lo.assign(static_cast<std::size_t>(opt.reps), kNaN);
    mr.ci_hi.assign(static_cast<std::size_t>(opt.reps), kNaN);
    mr.selected.resize(static_cast<std::size_t>(opt.reps));
  }
  std::vector<double> seconds(opt.methods.size() * static_cast<std::size_t>(opt.reps), 0.0);
  std::vector<std::uint8_t> failed(opt.methods.size() * static_cast<std::size_t>(opt.reps), 0);

  const int threads = resolve_threads(opt.est.fc_prop.num_threads);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int r = 0; r < opt.reps; ++r) {
    // Per-replicate stream indexed by (seed, setting, replicate): grids are
    // reproducible under resharding and replicate order is irrelevant.
    const std::uint64_t rep_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(spec.setting),
                                            static_cast<std::uint64_t>(r));
    const GenData gen = generate(spec, rep_seed);
    for (std::size_t m = 0; m < opt.methods.size(); ++m) {
      const std::string& method = opt.methods[m];
      EstimatorOptions est = opt.est;
      est.target_features = spec.target_features();
      est.true_propensity = gen.true_propensity;
      const std::size_t slot = m * static_cast<std::size_t>(opt.reps) + static_cast<std::size_t>(r);
      const double t0 = omp_get_wtime();
      try {
        const AteEstimate a =
            estimate_ate(gen.data, method, est, mix_seed(rep_seed, 100 + static_cast<std::uint64_t>(m)));
        report.methods[m].theta[static_cast<std::size_t>(r)] = a.theta;
        report.methods[m].selected[static_cast<std::size_t>(r)] = a.diagnostics.selected;
        if (opt.with_ci) {
          const BootstrapResult ci = bootstrap_ci(gen.data, method, est, opt.n_boot, opt.alpha,
                                                  mix_seed(rep_seed, 200 + static_cast<std::uint64_t>(m)));
          report.methods[m].ci_lo[static_cast<std::size_t>(r)] = ci.lower;
          report.methods[m].ci_hi[static_cast<std::size_t>(r)] = ci.upper;
        }
      } catch (const std::exception&) {
        failed[slot] = 1;
      }
      seconds[slot] = omp_get_wtime() - t0;
    }
  }

  for (std::size_t m = 0; m < opt.methods.size(); ++m) {
    for (int r = 0; r < opt.reps; ++r) {
      const std::size_t slot = m * static_cast<std::size_t>(opt.reps) + static_cast<std::size_t>(r);
      report.methods[m].failures += failed[slot];
      report.methods[m].seconds += seconds[slot];
    }
  }
  return report;
}

std::vector<McReport> mse_vs_n(DgpSpec spec, std::span<const int> n_grid, const McOptions& opt) {
  if (n_grid.empty()) throw std::invalid_argument("mse_vs_n: empty grid");
  if (!std::is_sorted(n_grid.begin(), n_grid.end()))
    throw std::invalid_argument("mse_vs_n: sample sizes must be ascending");
  std::vector<McReport> reports;
  reports.reserve(n_grid.size());
  for (int n : n_grid) {
    spec.n = n;
    reports.push_back(run_monte_carlo(spec, opt));
  }
  return reports;
}

namespace {

std::string mask_to_bits(const std::vector<std::uint8_t>& mask) {
  std::string s(mask.size(), '0');
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) s[i] = '1';
  return s;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_mc_csv(const std::vector<McReport>& reports, const std::string& path, const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "setting,n,p,method,rep,theta_hat,ci_lo,ci_hi,selected_mask\n";
  for (const McReport& rep : reports) {
    for (const MethodReplicates& m : rep.methods) {
      for (std::size_t r = 0; r < m.theta.size(); ++r) {
        out << rep.spec.setting << ',' << rep.spec.n << ',' << rep.spec.p << ',' << m.method << ',' << r << ','
            << format_double(m.theta[r]) << ',' << format_double(m.ci_lo[r]) << ',' << format_double(m.ci_hi[r]) << ','
            << mask_to_bits(m.selected[r]) << "\n";
      }
    }
  }
}

void write_mc_json(const std::vector<McReport>& reports, const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& extra_meta) {
  nlohmann::json root;
  nlohmann::json meta;
  for (const auto& [k, v] : extra_meta) meta[k] = v;
  root["meta"] = meta;
  root["reports"] = nlohmann::json::array();
  for (const McReport& rep : reports) {
    nlohmann::json jr;
    jr["setting"] = rep.spec.setting;
    jr["n"] = rep.spec.n;
    jr["p"] = rep.spec.p;
    jr["theta_true"] = rep.spec.theta;
    jr["rho"] = rep.spec.effective_rho();
    jr["reps"] = rep.reps;
    jr["seed"] = rep.seed;
    jr["methods"] = nlohmann::json::array();
    for (const MethodReplicates& m : rep.methods) {
      const McSummary s = rep.summarize(m.method);
      nlohmann::json jm;
      jm["method"] = m.method;
      jm["replicates"] = s.replicates;
      jm["failures"] = s.failures;
      jm["mean_theta"] = s.mean_theta;
      jm["bias"] = s.bias;
      jm["variance"] = s.variance;
      jm["mse"] = s.mse;
      if (std::isfinite(s.coverage)) {
        jm["coverage"] = s.coverage;
        jm["mean_ci_width"] = s.mean_width;
      }
      if (!s.selection_proportion.empty()) jm["selection_proportion"] = s.selection_proportion;
      // Runtime goes to the console summary only, so identical seeds give
      // byte-identical report files.
      jm["theta_hat"] = m.theta;
      jr["methods"].push_back(jm);
    }
    root["reports"].push_back(jr);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << root.dump(2) << "\n";
}

}  // namespace oarf
