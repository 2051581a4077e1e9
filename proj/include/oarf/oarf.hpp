#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "oarf/dataset.hpp"
#include "oarf/forest.hpp"
#include "oarf/importance.hpp"

namespace oarf {

struct PenaltyConfig {
  double gamma = 1.0;    // weight on feature-specific penalties
  double lambda0 = 0.0;  // base penalty
  bool depth_penalty = false;  // penalize outside features by lambda_j^depth (root depth 1)
};

// lambda_j = (1 - gamma) * lambda0 + gamma * normalized_j. Degenerate
// importance falls back to all-ones (no regularization): a zero penalty on
// every feature would forbid every split.
std::vector<double> penalty_vector(const ImportanceVector& imp, const PenaltyConfig& cfg);

// Ordered, grow-only feature set; origin records when each member entered.
class FeatureSet {
 public:
  static constexpr int kInitial = -1;

  FeatureSet() = default;
  explicit FeatureSet(int num_features) : member_(static_cast<std::size_t>(num_features), 0) {}

  bool contains(int feature) const { return member_[static_cast<std::size_t>(feature)] != 0; }
  void add(int feature, int origin_tree);
  int size() const { return static_cast<int>(members_.size()); }
  const std::vector<int>& members() const { return members_; }
  // kInitial for seed members, else the index of the tree that added it.
  const std::vector<int>& origins() const { return origins_; }

 private:
  std::vector<std::uint8_t> member_;
  std::vector<int> members_;
  std::vector<int> origins_;
};

// Features whose raw (signed) importance is at least the mean raw score.
FeatureSet initial_feature_set(const ImportanceVector& imp);

// How an outside feature earns an executed split. positive_gain accepts any
// strictly positive penalized gain (the plain guided-RRF behavior);
// beat_in_set requires the penalized gain to exceed the best raw gain the
// current feature set could achieve at that node, so outside features enter
// only on clear evidence; beat_parent requires exceeding the gain of the
// parent split.
enum class EntryRule { positive_gain, beat_in_set, beat_parent };

// Penalized gain of feature j at a node: raw if j is in the feature set,
// otherwise lambda_j * raw (or lambda_j^depth * raw with depth penalties,
// root at depth 1).
double regularized_gain(int feature, double raw_gain, const FeatureSet& fs, std::span<const double> lambda, int depth,
                        const PenaltyConfig& cfg);

struct RegularizedForest {
  Forest forest;
  FeatureSet feature_set;
};

// Sequentially regularized forest: trees are grown one after another and
// every executed split on an outside feature appends it to the shared
// feature set, visible to all later nodes and trees.
RegularizedForest train_regularized_forest(const Matrix& x, std::span<const double> target,
                                           std::span<const double> lambda, FeatureSet fs0, const ForestConfig& cfg,
                                           const PenaltyConfig& pc, EntryRule rule);

inline constexpr double kPropensityClip = 0.01;

struct PropensityFit {
  std::vector<double> e_hat;  // clipped to [kPropensityClip, 1 - kPropensityClip]
  Forest forest;
  FeatureSet final_feature_set;
  std::vector<std::uint8_t> selected;  // used in >= 1 executed split
  double clip_rate = 0.0;
  bool degenerate_importance = false;
};

struct OarfOptions {
  // Depth-weighted penalties on by default: splits far from the root are
  // mostly exhaustion noise, and flat penalties let treatment-only features
  // slip in there.
  PenaltyConfig penalty{1.0, 0.0, true};
  EntryRule rule = EntryRule::beat_in_set;
  bool use_initial_feature_set = true;  // off reproduces the plain RRF behavior
};

struct OarfFit {
  ImportanceVector importance;  // over the covariates (treatment entry dropped)
  std::vector<double> lambda;
  PropensityFit propensity;
};

std::vector<double> clip_probabilities(std::vector<double> e, double eps, double* clip_rate);

// Step 1: AIR importance of Y regressed on [D, X], dropping the treatment
// entry. Step 2: penalties and initial feature set from the X-only scores,
// then a regularized propensity forest of D on X. e_hat holds in-sample
// clipped probabilities.
OarfFit fit_oarf(const Dataset& data, const ForestConfig& fc_outcome, const ForestConfig& fc_prop,
                 const OarfOptions& opt);

// Step 2 only, for callers that already hold the step-1 importance (the
// cross-fitting path computes it once on the full sample).
PropensityFit fit_regularized_propensity(const Dataset& data, const ImportanceVector& imp_x,
                                         const ForestConfig& fc_prop, const OarfOptions& opt);

// Design matrix [D, X] used by the step-1 outcome forest.
Matrix outcome_design(const Dataset& data);

// Step-1 scores: AIR importance of Y on [D, X] with the treatment entry
// dropped and the remainder renormalized over the covariates.
ImportanceVector outcome_importance(const Dataset& data, const ForestConfig& fc_outcome);

}  // namespace oarf
