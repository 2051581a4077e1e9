// Timing harness for the parallel kernels against their serial reference
// paths. Results must match bit-for-bit; the benchmark asserts that too.

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "oarf/estimators.hpp"
#include "oarf/forest.hpp"
#include "oarf/importance.hpp"
#include "oarf/simlab.hpp"

namespace {

bool forests_equal(const oarf::Forest& a, const oarf::Forest& b) {
  if (a.trees.size() != b.trees.size()) return false;
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    const auto& na = a.trees[t].nodes;
    const auto& nb = b.trees[t].nodes;
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i)
      if (std::memcmp(&na[i], &nb[i], sizeof(oarf::TreeNode)) != 0) return false;
  }
  return true;
}

template <typename F>
auto timed(F&& f, double& seconds) {
  const double t0 = omp_get_wtime();
  auto result = f();
  seconds = omp_get_wtime() - t0;
  return result;
}

}  // namespace

int main(int argc, char** argv) {
  int n = 2000;
  int p = 20;
  int trees = 200;
  int reps = 20;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (!std::strcmp(argv[i], "--n")) n = std::atoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--p")) p = std::atoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--trees")) trees = std::atoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--reps")) reps = std::atoi(argv[i + 1]);
  }
  const int threads = oarf::resolve_threads(0);
  std::printf("n=%d p=%d trees=%d threads=%d\n\n", n, p, trees, threads);

  const oarf::DgpSpec spec = oarf::DgpSpec::for_setting(1, n, p);
  const oarf::GenData gen = oarf::generate(spec, 42);

  oarf::ForestConfig cfg;
  cfg.num_trees = trees;
  cfg.seed = 7;

  std::printf("%-28s %10s %10s %8s %10s\n", "kernel", "serial(s)", "parallel(s)", "speedup", "identical");

  {
    double ts = 0.0, tp = 0.0;
    const std::vector<double> y = oarf::target_values(gen.data, oarf::Target::outcome);
    const oarf::Forest serial = timed([&] { return oarf::train_forest_serial(gen.data.x, y, cfg); }, ts);
    const oarf::Forest parallel = timed([&] { return oarf::train_forest(gen.data.x, y, cfg); }, tp);
    std::printf("%-28s %10.3f %10.3f %8.2f %10s\n", "forest training", ts, tp, ts / tp,
                forests_equal(serial, parallel) ? "yes" : "NO");
  }

  {
    double ts = 0.0, tp = 0.0;
    oarf::ForestConfig one = cfg;
    one.num_threads = 1;
    const auto imp_serial = timed([&] { return oarf::air_importance(gen.data, one, oarf::Target::outcome); }, ts);
    const auto imp_parallel = timed([&] { return oarf::air_importance(gen.data, cfg, oarf::Target::outcome); }, tp);
    const bool same = imp_serial.raw == imp_parallel.raw;
    std::printf("%-28s %10.3f %10.3f %8.2f %10s\n", "shadow importance", ts, tp, ts / tp, same ? "yes" : "NO");
  }

  {
    // Monte Carlo replicates: the outer parallel loop of the toolkit.
    oarf::McOptions opt;
    opt.reps = reps;
    opt.methods = {"rf-full"};
    opt.seed = 3;
    opt.est.fc_outcome.num_trees = 50;
    opt.est.fc_prop.num_trees = 50;
    double ts = 0.0, tp = 0.0;
    oarf::McOptions serial_opt = opt;
    serial_opt.est.fc_prop.num_threads = 1;
    serial_opt.est.fc_outcome.num_threads = 1;
    const auto rep_serial = timed([&] { return oarf::run_monte_carlo(spec, serial_opt); }, ts);
    const auto rep_parallel = timed([&] { return oarf::run_monte_carlo(spec, opt); }, tp);
    const bool same = rep_serial.methods[0].theta == rep_parallel.methods[0].theta;
    std::printf("%-28s %10.3f %10.3f %8.2f %10s\n", "monte carlo replicates", ts, tp, ts / tp, same ? "yes" : "NO");
  }

  return 0;
}
