#include "oarf/importance.hpp"

#include <omp.h>

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace oarf {

ImportanceVector make_importance(std::vector<double> raw) {
  ImportanceVector imp;
  imp.clipped.resize(raw.size());
  imp.normalized.assign(raw.size(), 0.0);
  for (std::size_t j = 0; j < raw.size(); ++j) imp.clipped[j] = std::max(raw[j], 0.0);
  const double max_clipped = raw.empty() ? 0.0 : *std::max_element(imp.clipped.begin(), imp.clipped.end());
  if (max_clipped > 0.0) {
    for (std::size_t j = 0; j < raw.size(); ++j) imp.normalized[j] = imp.clipped[j] / max_clipped;
  } else {
    imp.degenerate = true;
  }
  imp.raw = std::move(raw);
  return imp;
}

namespace {

// Per-tree gains on the augmented design: [0, p) originals, [p, 2p) shadows.
std::vector<double> air_tree_gains(const Matrix& x, std::span<const double> y, const ForestConfig& cfg,
                                   std::span<const int> forced_candidates, std::uint64_t tree_seed) {
  const int n = x.rows();
  const int p = x.cols();
  Rng rng(tree_seed);
  std::vector<int> rows = bootstrap_rows(n, cfg.sample_fraction, rng);

  // Fresh independent row permutation per shadow column per tree.
  Matrix aug(n, 2 * p);
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 0; j < p; ++j) {
    auto src = x.col(j);
    auto dst = aug.col(j);
    std::copy(src.begin(), src.end(), dst.begin());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto shadow = aug.col(p + j);
    for (int i = 0; i < n; ++i) shadow[static_cast<std::size_t>(i)] = src[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }

  std::vector<double> gains(static_cast<std::size_t>(2 * p), 0.0);
  TreeGrower::Options opt;
  opt.cfg = cfg;
  opt.pool_size = 2 * p;
  opt.mtry = cfg.mtry > 0 ? std::min(cfg.mtry, 2 * p) : default_mtry(p);
  opt.forced_candidates.assign(forced_candidates.begin(), forced_candidates.end());
  opt.gain_accum = &gains;
  TreeGrower grower;
  grower.grow(aug, y, std::move(rows), rng, opt, choose_max_gain);
  return gains;
}

}  // namespace

ImportanceVector air_importance(const Matrix& x, std::span<const double> y, const ForestConfig& cfg,
                                std::span<const int> forced_candidates) {
  const int p = x.cols();
  if (p < 1) throw std::invalid_argument("importance: empty design");
  if (x.rows() < 2 * cfg.min_node_size)
    throw std::invalid_argument("importance: need at least 2*min_node_size rows");
  const int B = cfg.num_trees;
  std::vector<std::vector<double>> per_tree(static_cast<std::size_t>(B));
  const int threads = resolve_threads(cfg.num_threads);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int b = 0; b < B; ++b)
    per_tree[static_cast<std::size_t>(b)] =
        air_tree_gains(x, y, cfg, forced_candidates, mix_seed(cfg.seed, static_cast<std::uint64_t>(b)));

  // Reduce in tree order so the result is independent of thread scheduling.
  std::vector<double> raw(static_cast<std::size_t>(p), 0.0);
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < p; ++j)
      raw[static_cast<std::size_t>(j)] +=
          per_tree[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)] -
          per_tree[static_cast<std::size_t>(b)][static_cast<std::size_t>(p + j)];
  for (double& v : raw) v /= static_cast<double>(B);
  return make_importance(std::move(raw));
}

ImportanceVector air_importance(const Dataset& data, const ForestConfig& cfg, Target target) {
  const std::vector<double> y = target_values(data, target);
  return air_importance(data.x, y, cfg);
}

}  // namespace oarf
