#include "oarf/forest.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace oarf {

double Tree::predict_row(const Matrix& x, int row) const {
  int node = 0;
  while (!nodes[static_cast<std::size_t>(node)].is_leaf()) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
    node = x(row, nd.feature) < nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

double Tree::predict(std::span<const double> row) const {
  int node = 0;
  while (!nodes[static_cast<std::size_t>(node)].is_leaf()) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
    node = row[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

double Forest::predict(std::span<const double> row) const {
  if (trees.empty()) throw std::invalid_argument("forest: predict on empty forest");
  if (static_cast<int>(row.size()) != num_features)
    throw std::invalid_argument("forest: row has " + std::to_string(row.size()) + " features, expected " +
                                std::to_string(num_features));
  double sum = 0.0;
  for (const Tree& t : trees) sum += t.predict(row);
  return sum / static_cast<double>(trees.size());
}

std::vector<double> Forest::predict_rows(const Matrix& x) const {
  if (trees.empty()) throw std::invalid_argument("forest: predict on empty forest");
  if (x.cols() != num_features) throw std::invalid_argument("forest: matrix feature count mismatch");
  std::vector<double> out(static_cast<std::size_t>(x.rows()), 0.0);
  for (const Tree& t : trees)
    for (int i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] += t.predict_row(x, i);
  for (double& v : out) v /= static_cast<double>(trees.size());
  return out;
}

std::vector<std::uint8_t> Forest::features_used() const {
  std::vector<std::uint8_t> used(static_cast<std::size_t>(num_features), 0);
  for (const Tree& t : trees)
    for (const TreeNode& nd : t.nodes)
      if (!nd.is_leaf()) used[static_cast<std::size_t>(nd.feature)] = 1;
  return used;
}

int resolve_threads(int requested) {
  int cap = omp_get_max_threads();
  if (const char* env = std::getenv("OARF_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) cap = std::min(cap, v);
  }
  if (requested > 0) cap = std::min(cap, requested);
  return std::max(1, cap);
}

NodeStats node_stats(std::span<const double> y, std::span<const int> rows) {
  NodeStats s;
  s.count = static_cast<int>(rows.size());
  double sum = 0.0;
  for (int r : rows) sum += y[static_cast<std::size_t>(r)];
  s.mean = sum / static_cast<double>(s.count);
  double sse = 0.0;
  for (int r : rows) {
    const double dv = y[static_cast<std::size_t>(r)] - s.mean;
    sse += dv * dv;
  }
  s.cost = sse;
  return s;
}

std::optional<Split> SplitFinder::best_for_feature(std::span<const int> rows, int feature, const NodeStats& stats) {
  const int k = static_cast<int>(rows.size());
  if (k < 2) return std::nullopt;

  scratch_.clear();
  scratch_.reserve(static_cast<std::size_t>(k));
  for (int r : rows)
    scratch_.emplace_back((*x_)(r, feature), y_[static_cast<std::size_t>(r)] - stats.mean);
  std::sort(scratch_.begin(), scratch_.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Centering y on the node mean keeps the sums small; the parent cost is
  // then exactly sum of squares of the centered values.
  double total_sq = 0.0;
  double total_sum = 0.0;
  for (const auto& pr : scratch_) {
    total_sq += pr.second * pr.second;
    total_sum += pr.second;
  }
  const double nd = static_cast<double>(k);
  // Reject numerical dust so constant-outcome nodes never split.
  const double min_gain = 1e-12 * std::max(1.0, total_sq);

  Split best;
  bool found = false;
  double left_sum = 0.0;
  for (int i = 0; i + 1 < k; ++i) {
    const double cy = scratch_[static_cast<std::size_t>(i)].second;
    left_sum += cy;
    const double xv = scratch_[static_cast<std::size_t>(i)].first;
    const double xn = scratch_[static_cast<std::size_t>(i + 1)].first;
    if (xv == xn) continue;
    const double nl = static_cast<double>(i + 1);
    const double nr = nd - nl;
    // Parent SSE minus child SSEs; with centered values this collapses to
    // the squared child sums.
    const double right_sum = total_sum - left_sum;
    const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
    if (gain > min_gain && (!found || gain > best.gain)) {
      best.feature = feature;
      best.threshold = xv + 0.5 * (xn - xv);
      best.gain = gain;
      found = true;
    }
  }
  if (!found) return std::nullopt;
  return best;
}

std::optional<Split> SplitFinder::best(std::span<const int> rows, std::span<const int> candidates,
                                       const NodeStats& stats) {
  std::optional<Split> best;
  for (int f : candidates) {
    auto s = best_for_feature(rows, f, stats);
    if (s && (!best || s->gain > best->gain)) best = s;
  }
  return best;
}

std::optional<Split> choose_max_gain(std::span<const int> rows, std::span<const int> candidates,
                                     const NodeStats& stats, const NodeContext& /*ctx*/, SplitFinder& finder) {
  return finder.best(rows, candidates, stats);
}

std::vector<int> bootstrap_rows(int n, double sample_fraction, Rng& rng) {
  const int draws = std::max(1, static_cast<int>(std::lround(sample_fraction * n)));
  std::vector<int> rows(static_cast<std::size_t>(draws));
  for (int& r : rows) r = rng.uniform_int(n);
  return rows;
}

int default_mtry(int p) { return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p)))); }

namespace {

struct GrowState {
  const Matrix* x;
  std::span<const double> y;
  const TreeGrower::Options* opt;
  const TreeGrower::Chooser* chooser;
  Rng* rng;
  SplitFinder* finder;
  Tree* tree;
  std::vector<int>* candidate_scratch;
};

int grow_node(GrowState& st, std::vector<int>& rows, const NodeContext& ctx) {
  const NodeStats stats = node_stats(st.y, rows);
  const int node_id = static_cast<int>(st.tree->nodes.size());
  st.tree->nodes.emplace_back();
  {
    TreeNode& nd = st.tree->nodes.back();
    nd.value = stats.mean;
    nd.count = stats.count;
  }

  const ForestConfig& cfg = st.opt->cfg;
  if (stats.count < cfg.min_node_size) return node_id;
  if (cfg.max_depth > 0 && ctx.depth >= cfg.max_depth) return node_id;

  // mtry candidates without replacement, sorted so ties resolve to the
  // lowest feature index.
  std::vector<int> candidates =
      st.rng->sample_without_replacement(st.opt->pool_size, st.opt->mtry, *st.candidate_scratch);
  for (int f : st.opt->forced_candidates) candidates.push_back(f);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  auto split = (*st.chooser)(rows, candidates, stats, ctx, *st.finder);
  if (!split) return node_id;

  if (st.opt->gain_accum) (*st.opt->gain_accum)[static_cast<std::size_t>(split->feature)] += split->gain;

  std::vector<int> left_rows;
  std::vector<int> right_rows;
  left_rows.reserve(rows.size());
  right_rows.reserve(rows.size());
  for (int r : rows) {
    if ((*st.x)(r, split->feature) < split->threshold)
      left_rows.push_back(r);
    else
      right_rows.push_back(r);
  }
  rows.clear();
  rows.shrink_to_fit();

  const NodeContext child_ctx{ctx.depth + 1, split->gain};
  const int left_id = grow_node(st, left_rows, child_ctx);
  const int right_id = grow_node(st, right_rows, child_ctx);

  TreeNode& nd = st.tree->nodes[static_cast<std::size_t>(node_id)];
  nd.feature = split->feature;
  nd.threshold = split->threshold;
  nd.gain = split->gain;
  nd.left = left_id;
  nd.right = right_id;
  return node_id;
}

}  // namespace

Tree TreeGrower::grow(const Matrix& x, std::span<const double> y, std::vector<int> rows, Rng& rng, const Options& opt,
                      const Chooser& chooser) {
  if (rows.empty()) throw std::invalid_argument("tree: empty bootstrap sample");
  Tree tree;
  SplitFinder finder(x, y);
  std::vector<int> scratch;
  GrowState st{&x, y, &opt, &chooser, &rng, &finder, &tree, &scratch};
  grow_node(st, rows, NodeContext{});
  return tree;
}

namespace {

Tree build_plain_tree(const Matrix& x, std::span<const double> y, const ForestConfig& cfg, std::uint64_t tree_seed) {
  Rng rng(tree_seed);
  std::vector<int> rows = bootstrap_rows(x.rows(), cfg.sample_fraction, rng);
  TreeGrower::Options opt;
  opt.cfg = cfg;
  opt.pool_size = x.cols();
  opt.mtry = cfg.mtry > 0 ? std::min(cfg.mtry, x.cols()) : default_mtry(x.cols());
  TreeGrower grower;
  return grower.grow(x, y, std::move(rows), rng, opt, choose_max_gain);
}

}  // namespace

Forest train_forest(const Matrix& x, std::span<const double> y, const ForestConfig& cfg) {
  if (cfg.num_trees < 1) throw std::invalid_argument("forest: num_trees must be >= 1");
  Forest forest;
  forest.num_features = x.cols();
  forest.trees.resize(static_cast<std::size_t>(cfg.num_trees));
  const int threads = resolve_threads(cfg.num_threads);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int b = 0; b < cfg.num_trees; ++b)
    forest.trees[static_cast<std::size_t>(b)] =
        build_plain_tree(x, y, cfg, mix_seed(cfg.seed, static_cast<std::uint64_t>(b)));
  return forest;
}

Forest train_forest_serial(const Matrix& x, std::span<const double> y, const ForestConfig& cfg) {
  if (cfg.num_trees < 1) throw std::invalid_argument("forest: num_trees must be >= 1");
  Forest forest;
  forest.num_features = x.cols();
  forest.trees.reserve(static_cast<std::size_t>(cfg.num_trees));
  for (int b = 0; b < cfg.num_trees; ++b)
    forest.trees.push_back(build_plain_tree(x, y, cfg, mix_seed(cfg.seed, static_cast<std::uint64_t>(b))));
  return forest;
}

std::vector<double> target_values(const Dataset& data, Target target) {
  if (target == Target::outcome) return data.y;
  std::vector<double> t(data.d.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(data.d[i]);
  return t;
}

std::optional<Split> best_split(std::span<const int> rows, std::span<const int> candidates, const Dataset& data,
                                Target target) {
  if (rows.size() < 2 || candidates.empty()) return std::nullopt;
  const std::vector<double> y = target_values(data, target);
  SplitFinder finder(data.x, y);
  const NodeStats stats = node_stats(y, rows);
  std::vector<int> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  return finder.best(rows, sorted, stats);
}

Tree build_tree(const Dataset& data, Target target, const ForestConfig& cfg, std::vector<int> rows, Rng& rng) {
  const std::vector<double> y = target_values(data, target);
  TreeGrower::Options opt;
  opt.cfg = cfg;
  opt.pool_size = data.p();
  opt.mtry = cfg.mtry > 0 ? std::min(cfg.mtry, data.p()) : default_mtry(data.p());
  TreeGrower grower;
  return grower.grow(data.x, y, std::move(rows), rng, opt, choose_max_gain);
}

}  // namespace oarf
