#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "oarf/dataset.hpp"
#include "oarf/rng.hpp"

namespace oarf {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;  // raw impurity gain, never the penalized value
};

// feature < 0 marks a leaf.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
  double value = 0.0;  // leaf mean
  int count = 0;
  int left = -1;
  int right = -1;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict_row(const Matrix& x, int row) const;
  double predict(std::span<const double> row) const;
};

struct Forest {
  std::vector<Tree> trees;
  int num_features = 0;

  bool empty() const { return trees.empty(); }
  // Mean of per-tree leaf values; routing rule is x_j < threshold goes left.
  double predict(std::span<const double> row) const;
  std::vector<double> predict_rows(const Matrix& x) const;
  // Marks features appearing in at least one internal node.
  std::vector<std::uint8_t> features_used() const;
};

struct ForestConfig {
  int num_trees = 500;
  int mtry = 0;           // 0: ceil(sqrt(p))
  int min_node_size = 10;  // nodes smaller than this become leaves
  int max_depth = 0;      // 0: unlimited
  std::uint64_t seed = 0;
  double sample_fraction = 1.0;  // bootstrap draws as a fraction of n, with replacement
  int num_threads = 0;           // 0: all available (capped by OARF_THREADS)
};

int resolve_threads(int requested);

struct NodeStats {
  double mean = 0.0;
  double cost = 0.0;  // within-node sum of squared errors
  int count = 0;
};

NodeStats node_stats(std::span<const double> y, std::span<const int> rows);

// Exact split search over midpoints of consecutive distinct sorted values.
// Holds scratch buffers so repeated scans do not allocate.
class SplitFinder {
 public:
  SplitFinder(const Matrix& x, std::span<const double> y) : x_(&x), y_(y) {}

  // Best threshold for a single feature, maximizing the impurity gain
  //   gain = SSE(t) - SSE(L) - SSE(R),
  // the node-size-weighted form of the per-observation impurity decrease.
  // Returns nothing when no candidate has strictly positive gain.
  std::optional<Split> best_for_feature(std::span<const int> rows, int feature, const NodeStats& stats);

  // Best over a candidate set; ties broken by lowest feature index then
  // lowest threshold (candidates must be sorted ascending).
  std::optional<Split> best(std::span<const int> rows, std::span<const int> candidates, const NodeStats& stats);

 private:
  const Matrix* x_;
  std::span<const double> y_;
  std::vector<std::pair<double, double>> scratch_;
};

struct NodeContext {
  int depth = 0;            // root is 0
  double parent_gain = 0.0;  // raw gain of the split that created this node
};

// One growth engine shared by the plain, shadow-augmented, and regularized
// forests; the chooser decides which split (if any) a node executes.
class TreeGrower {
 public:
  using Chooser = std::function<std::optional<Split>(std::span<const int> rows, std::span<const int> candidates,
                                                     const NodeStats& stats, const NodeContext& ctx,
                                                     SplitFinder& finder)>;

  struct Options {
    ForestConfig cfg;
    int pool_size = 0;                        // candidates drawn from [0, pool_size)
    int mtry = 0;                             // resolved candidate count per node
    std::vector<int> forced_candidates;       // always added to the draw (sorted, unique)
    std::vector<double>* gain_accum = nullptr;  // per-feature executed-gain sums
  };

  Tree grow(const Matrix& x, std::span<const double> y, std::vector<int> rows, Rng& rng, const Options& opt,
            const Chooser& chooser);
};

// Chooser that takes the raw-gain argmax (standard CART behavior).
std::optional<Split> choose_max_gain(std::span<const int> rows, std::span<const int> candidates, const NodeStats& stats,
                                     const NodeContext& ctx, SplitFinder& finder);

std::vector<int> bootstrap_rows(int n, double sample_fraction, Rng& rng);

int default_mtry(int p);

// Bagged regression forest; trees are built on independent per-tree seed
// streams so the parallel and serial paths produce identical forests.
Forest train_forest(const Matrix& x, std::span<const double> y, const ForestConfig& cfg);
// Reference implementation: plain sequential loop, no OpenMP. Kept for
// determinism tests and benchmarking against the parallel path.
Forest train_forest_serial(const Matrix& x, std::span<const double> y, const ForestConfig& cfg);

// Dataset-level conveniences: fit against the outcome or the 0/1 treatment
// (binary treatment handled as regression, leaf mean = probability).
enum class Target { outcome, treatment };

std::vector<double> target_values(const Dataset& data, Target target);

std::optional<Split> best_split(std::span<const int> rows, std::span<const int> candidates, const Dataset& data,
                                Target target);

Tree build_tree(const Dataset& data, Target target, const ForestConfig& cfg, std::vector<int> rows, Rng& rng);

}  // namespace oarf
