#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "doctest.h"
#include "oarf/forest.hpp"
#include "oarf/importance.hpp"

using namespace oarf;

namespace {

// Brute-force split oracle: enumerates every (feature, midpoint) pair and
// evaluates the gain with direct two-pass means. Independent of the
// prefix-sum scan in the library.
std::optional<Split> oracle_best_split(const Matrix& x, const std::vector<double>& y, const std::vector<int>& rows,
                                       const std::vector<int>& candidates) {
  auto sse = [&](const std::vector<int>& rs) {
    if (rs.empty()) return 0.0;
    double mean = 0.0;
    for (int r : rs) mean += y[static_cast<std::size_t>(r)];
    mean /= static_cast<double>(rs.size());
    double s = 0.0;
    for (int r : rs) s += (y[static_cast<std::size_t>(r)] - mean) * (y[static_cast<std::size_t>(r)] - mean);
    return s;
  };
  const double parent = sse(rows);

  std::optional<Split> best;
  std::vector<int> sorted_candidates = candidates;
  std::sort(sorted_candidates.begin(), sorted_candidates.end());
  for (int f : sorted_candidates) {
    std::vector<double> values;
    for (int r : rows) values.push_back(x(r, f));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t v = 0; v + 1 < values.size(); ++v) {
      const double thr = values[v] + 0.5 * (values[v + 1] - values[v]);
      std::vector<int> left, right;
      for (int r : rows) (x(r, f) < thr ? left : right).push_back(r);
      const double gain = parent - sse(left) - sse(right);
      if (gain > 1e-12 && (!best || gain > best->gain)) best = Split{f, thr, gain};
    }
  }
  return best;
}

Dataset make_dataset(const std::vector<std::vector<double>>& cols, std::vector<double> y, std::vector<int> d) {
  Dataset data;
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(cols.size());
  data.x = Matrix(n, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < n; ++i) data.x(i, j) = cols[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
  data.y = std::move(y);
  data.d = std::move(d);
  for (int j = 0; j < p; ++j) data.col_meta.push_back({"X" + std::to_string(j + 1), ColumnKind::continuous});
  return data;
}

bool same_forest(const Forest& a, const Forest& b) {
  if (a.trees.size() != b.trees.size()) return false;
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    const auto& na = a.trees[t].nodes;
    const auto& nb = b.trees[t].nodes;
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i)
      if (std::memcmp(&na[i], &nb[i], sizeof(TreeNode)) != 0) return false;
  }
  return true;
}

// Rows reaching each node of a tree when routed from the root.
void collect_rows(const Tree& tree, const Matrix& x, int node, const std::vector<int>& rows,
                  std::map<int, std::vector<int>>& out) {
  out[node] = rows;
  const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
  if (nd.is_leaf()) return;
  std::vector<int> left, right;
  for (int r : rows) (x(r, nd.feature) < nd.threshold ? left : right).push_back(r);
  collect_rows(tree, x, nd.left, left, out);
  collect_rows(tree, x, nd.right, right, out);
}

}  // namespace

TEST_CASE("best_split matches the hand example") {
  const Dataset data = make_dataset({{1, 2, 3, 4}}, {0, 0, 10, 10}, {0, 0, 1, 1});
  const std::vector<int> rows = {0, 1, 2, 3};
  const std::vector<int> candidates = {0};
  const auto split = best_split(rows, candidates, data, Target::outcome);
  REQUIRE(split.has_value());
  CHECK(split->feature == 0);
  CHECK(split->threshold == doctest::Approx(2.5));
  CHECK(split->gain == doctest::Approx(100.0));
}

TEST_CASE("best_split returns nothing for constant outcome or single rows") {
  const Dataset data = make_dataset({{1, 2, 3, 4}}, {5, 5, 5, 5}, {0, 0, 1, 1});
  const std::vector<int> rows = {0, 1, 2, 3};
  const std::vector<int> candidates = {0};
  CHECK_FALSE(best_split(rows, candidates, data, Target::outcome).has_value());
  const std::vector<int> one = {2};
  CHECK_FALSE(best_split(one, candidates, data, Target::outcome).has_value());
}

TEST_CASE("split search agrees with the brute-force oracle on random tiny data") {
  Rng rng(20240811);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + rng.uniform_int(49);
    const int p = 1 + rng.uniform_int(5);
    Matrix x(n, p);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
      y[static_cast<std::size_t>(i)] = rng.normal();
    }
    std::vector<int> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<int> candidates(static_cast<std::size_t>(p));
    std::iota(candidates.begin(), candidates.end(), 0);

    SplitFinder finder(x, y);
    const NodeStats stats = node_stats(y, rows);
    const auto mine = finder.best(rows, candidates, stats);
    const auto expected = oracle_best_split(x, y, rows, candidates);
    REQUIRE(mine.has_value() == expected.has_value());
    if (mine) {
      CHECK(std::abs(mine->gain - expected->gain) < 1e-10);
      if (mine->feature == expected->feature) {
        CHECK(mine->threshold == doctest::Approx(expected->threshold));
      } else {
        // Distinct features can reach the same optimum (identical row
        // partitions); fp summation order then decides the argmax. Confirm
        // it was a true tie by rescoring the returned split with the oracle.
        const auto rescored = oracle_best_split(x, y, rows, {mine->feature});
        REQUIRE(rescored.has_value());
        CHECK(rescored->threshold == doctest::Approx(mine->threshold));
        CHECK(std::abs(rescored->gain - expected->gain) < 1e-10);
      }
    }
  }
}

TEST_CASE("gain decomposition and leaf consistency hold on a full-sample tree") {
  Rng rng(99);
  const int n = 120;
  std::vector<std::vector<double>> cols(3, std::vector<double>(n));
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (auto& c : cols) c[static_cast<std::size_t>(i)] = rng.normal();
    y[static_cast<std::size_t>(i)] = cols[0][static_cast<std::size_t>(i)] + 0.5 * rng.normal();
  }
  Dataset data = make_dataset(cols, y, std::vector<int>(n, 0));

  ForestConfig cfg;
  cfg.min_node_size = 5;
  cfg.mtry = 3;
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  Rng tree_rng(7);
  const Tree tree = build_tree(data, Target::outcome, cfg, rows, tree_rng);

  std::map<int, std::vector<int>> node_rows;
  collect_rows(tree, data.x, 0, rows, node_rows);

  auto sse_of = [&](const std::vector<int>& rs) {
    double mean = 0.0;
    for (int r : rs) mean += data.y[static_cast<std::size_t>(r)];
    mean /= static_cast<double>(rs.size());
    double s = 0.0;
    for (int r : rs) s += (data.y[static_cast<std::size_t>(r)] - mean) * (data.y[static_cast<std::size_t>(r)] - mean);
    return s;
  };

  int internal = 0, leaves = 0;
  for (const auto& [node, rs] : node_rows) {
    const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
    REQUIRE(static_cast<int>(rs.size()) == nd.count);
    if (nd.is_leaf()) {
      ++leaves;
      double mean = 0.0;
      for (int r : rs) mean += data.y[static_cast<std::size_t>(r)];
      mean /= static_cast<double>(rs.size());
      CHECK(std::abs(nd.value - mean) < 1e-12);
    } else {
      ++internal;
      const auto& left = node_rows.at(nd.left);
      const auto& right = node_rows.at(nd.right);
      const double gain = sse_of(rs) - sse_of(left) - sse_of(right);
      CHECK(std::abs(gain - nd.gain) < 1e-9);
    }
  }
  CHECK(internal > 0);
  CHECK(leaves > internal);
}

TEST_CASE("degenerate trees") {
  const Dataset data = make_dataset({{1, 2}}, {3.5, 4.5}, {0, 1});
  ForestConfig cfg;
  Rng rng(1);
  const Tree tree = build_tree(data, Target::outcome, cfg, {1}, rng);
  REQUIRE(tree.nodes.size() == 1);
  CHECK(tree.nodes[0].value == doctest::Approx(4.5));
  CHECK(tree.nodes[0].count == 1);
}

TEST_CASE("binary separable outcome yields a depth-1 tree with pure leaves") {
  Dataset data = make_dataset({{0, 0, 0, 1, 1, 1}, {0.3, -0.6, 0.1, 0.9, -0.2, 0.4}}, {2, 2, 2, 7, 7, 7},
                              {0, 0, 0, 1, 1, 1});
  ForestConfig cfg;
  cfg.mtry = 2;
  cfg.min_node_size = 2;
  std::vector<int> rows = {0, 1, 2, 3, 4, 5};
  Rng rng(11);
  const Tree tree = build_tree(data, Target::outcome, cfg, rows, rng);
  REQUIRE(tree.nodes.size() == 3);
  CHECK(tree.nodes[0].feature == 0);
  const auto oracle = oracle_best_split(data.x, data.y, rows, {0, 1});
  CHECK(tree.nodes[0].feature == oracle->feature);
  CHECK(tree.nodes[0].threshold == doctest::Approx(oracle->threshold));
  CHECK(tree.nodes[static_cast<std::size_t>(tree.nodes[0].left)].value == doctest::Approx(2.0));
  CHECK(tree.nodes[static_cast<std::size_t>(tree.nodes[0].right)].value == doctest::Approx(7.0));
}

TEST_CASE("prediction basics") {
  Forest leaf_only;
  leaf_only.num_features = 2;
  Tree t;
  t.nodes.push_back(TreeNode{});
  t.nodes[0].value = 3.2;
  leaf_only.trees.push_back(t);
  const std::vector<double> row = {0.0, 100.0};
  CHECK(leaf_only.predict(row) == doctest::Approx(3.2));

  Forest two = leaf_only;
  two.trees.push_back(t);
  two.trees[1].nodes[0].value = 0.0;
  two.trees[0].nodes[0].value = 1.0;
  CHECK(two.predict(row) == doctest::Approx(0.5));

  const std::vector<double> bad = {1.0};
  CHECK_THROWS(leaf_only.predict(bad));
  Forest empty;
  CHECK_THROWS(empty.predict(row));
}

TEST_CASE("a full-depth tree memorizes a noiseless step function") {
  const int n = 40;
  std::vector<std::vector<double>> cols(1, std::vector<double>(n));
  std::vector<double> y(static_cast<std::size_t>(n));
  Rng rng(5);
  for (int i = 0; i < n; ++i) {
    cols[0][static_cast<std::size_t>(i)] = static_cast<double>(i) / n + 0.01 * rng.uniform();
    y[static_cast<std::size_t>(i)] = cols[0][static_cast<std::size_t>(i)] > 0.5 ? 1.0 : 0.0;
  }
  Dataset data = make_dataset(cols, y, std::vector<int>(n, 0));
  ForestConfig cfg;
  cfg.min_node_size = 2;
  cfg.mtry = 1;
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  Rng tree_rng(3);
  const Tree tree = build_tree(data, Target::outcome, cfg, rows, tree_rng);
  Forest forest;
  forest.num_features = 1;
  forest.trees.push_back(tree);
  const std::vector<double> preds = forest.predict_rows(data.x);
  for (int i = 0; i < n; ++i)
    CHECK(preds[static_cast<std::size_t>(i)] == doctest::Approx(data.y[static_cast<std::size_t>(i)]));
}

TEST_CASE("training is deterministic and independent of parallelism") {
  Rng rng(17);
  const int n = 150;
  Matrix x(n, 4);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) x(i, j) = rng.normal();
    y[static_cast<std::size_t>(i)] = x(i, 1) - x(i, 2) + 0.3 * rng.normal();
  }
  ForestConfig cfg;
  cfg.num_trees = 24;
  cfg.seed = 123;
  cfg.min_node_size = 5;
  const Forest parallel = train_forest(x, y, cfg);
  const Forest serial = train_forest_serial(x, y, cfg);
  CHECK(same_forest(parallel, serial));

  const Forest again = train_forest(x, y, cfg);
  CHECK(same_forest(parallel, again));

  ForestConfig other = cfg;
  other.seed = 124;
  CHECK_FALSE(same_forest(parallel, train_forest(x, y, other)));
}

TEST_CASE("importance clipping and normalization") {
  const ImportanceVector imp = make_importance({-1.0, 2.0, 4.0});
  CHECK_FALSE(imp.degenerate);
  CHECK(imp.clipped[0] == 0.0);
  CHECK(imp.clipped[1] == 2.0);
  CHECK(imp.clipped[2] == 4.0);
  CHECK(imp.normalized[0] == doctest::Approx(0.0));
  CHECK(imp.normalized[1] == doctest::Approx(0.5));
  CHECK(imp.normalized[2] == doctest::Approx(1.0));
  CHECK(*std::max_element(imp.normalized.begin(), imp.normalized.end()) == doctest::Approx(1.0));

  const ImportanceVector degenerate = make_importance({-1.0, -0.5, 0.0});
  CHECK(degenerate.degenerate);
  for (double v : degenerate.normalized) CHECK(v == 0.0);
}

TEST_CASE("shadow importance finds the signal feature") {
  ForestConfig cfg;
  cfg.num_trees = 60;
  cfg.min_node_size = 10;
  int wins = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(static_cast<std::uint64_t>(900 + seed));
    const int n = 200, p = 5;
    Matrix x(n, p);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
      y[static_cast<std::size_t>(i)] = x(i, 0);
    }
    cfg.seed = static_cast<std::uint64_t>(seed);
    const ImportanceVector imp = air_importance(x, y, cfg);
    const int argmax = static_cast<int>(std::max_element(imp.raw.begin(), imp.raw.end()) - imp.raw.begin());
    if (argmax == 0) ++wins;
  }
  CHECK(wins >= 18);  // majority vote over seeds; signal should dominate
}

TEST_CASE("shadow importance on pure noise stays centered at zero") {
  ForestConfig cfg;
  cfg.num_trees = 40;
  cfg.min_node_size = 10;
  const int n = 120, p = 4, seeds = 100;
  std::vector<std::vector<double>> raws;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(5000 + s));
    Matrix x(n, p);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
      y[static_cast<std::size_t>(i)] = rng.normal();
    }
    cfg.seed = static_cast<std::uint64_t>(s);
    raws.push_back(air_importance(x, y, cfg).raw);
  }
  // Seed-replicated means should sit well inside the spread of the scores;
  // an uncorrected impurity importance earns positive gains every tree and
  // pushes every mean past its own standard deviation.
  double pooled_mean = 0.0, pooled_sd = 0.0;
  for (int j = 0; j < p; ++j) {
    double mean = 0.0;
    for (const auto& r : raws) mean += r[static_cast<std::size_t>(j)];
    mean /= seeds;
    double sd = 0.0;
    for (const auto& r : raws) sd += (r[static_cast<std::size_t>(j)] - mean) * (r[static_cast<std::size_t>(j)] - mean);
    sd = std::sqrt(sd / (seeds - 1));
    CHECK(std::abs(mean) < 0.45 * sd);
    pooled_mean += mean / p;
    pooled_sd += sd / p;
  }
  CHECK(std::abs(pooled_mean) < 0.2 * pooled_sd);
}

TEST_CASE("importance is deterministic across thread counts") {
  Rng rng(77);
  const int n = 100, p = 3;
  Matrix x(n, p);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
    y[static_cast<std::size_t>(i)] = x(i, 2) + rng.normal();
  }
  ForestConfig one;
  one.num_trees = 30;
  one.seed = 9;
  one.num_threads = 1;
  ForestConfig many = one;
  many.num_threads = 0;
  CHECK(air_importance(x, y, one).raw == air_importance(x, y, many).raw);
}
