#include "oarf/oarf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oarf {

std::vector<double> penalty_vector(const ImportanceVector& imp, const PenaltyConfig& cfg) {
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0)
    throw std::invalid_argument("penalty: gamma must lie in [0,1]");
  if (cfg.lambda0 < 0.0 || cfg.lambda0 > 1.0)
    throw std::invalid_argument("penalty: lambda0 must lie in [0,1]");
  if (imp.degenerate) return std::vector<double>(imp.normalized.size(), 1.0);
  std::vector<double> lambda(imp.normalized.size());
  for (std::size_t j = 0; j < lambda.size(); ++j)
    lambda[j] = (1.0 - cfg.gamma) * cfg.lambda0 + cfg.gamma * imp.normalized[j];
  return lambda;
}

void FeatureSet::add(int feature, int origin_tree) {
  if (member_[static_cast<std::size_t>(feature)]) return;
  member_[static_cast<std::size_t>(feature)] = 1;
  members_.push_back(feature);
  origins_.push_back(origin_tree);
}

FeatureSet initial_feature_set(const ImportanceVector& imp) {
  const std::size_t p = imp.raw.size();
  FeatureSet fs(static_cast<int>(p));
  const double mean = std::accumulate(imp.raw.begin(), imp.raw.end(), 0.0) / static_cast<double>(p);
  for (std::size_t j = 0; j < p; ++j)
    if (imp.raw[j] >= mean) fs.add(static_cast<int>(j), FeatureSet::kInitial);
  return fs;
}

double regularized_gain(int feature, double raw_gain, const FeatureSet& fs, std::span<const double> lambda, int depth,
                        const PenaltyConfig& cfg) {
  if (fs.contains(feature)) return raw_gain;
  const double lj = lambda[static_cast<std::size_t>(feature)];
  if (cfg.depth_penalty) return std::pow(lj, std::max(1, depth)) * raw_gain;
  return lj * raw_gain;
}

namespace {

// Split selection under Eq.-8 penalties. Ranks drawn candidates by
// penalized gain; an outside feature may only execute a split when it
// clears the configured entry rule, and entering mutates the shared
// feature set for all later nodes and trees.
class RegularizedChooser {
 public:
  RegularizedChooser(FeatureSet& fs, std::span<const double> lambda, const PenaltyConfig& pc, EntryRule rule)
      : fs_(&fs), lambda_(lambda), pc_(pc), rule_(rule) {}

  void set_tree(int tree_index) { tree_ = tree_index; }

  std::optional<Split> operator()(std::span<const int> rows, std::span<const int> candidates, const NodeStats& stats,
                                  const NodeContext& ctx, SplitFinder& finder) {
    std::optional<Split> best_in;
    std::optional<Split> best_out;
    double best_out_penalized = 0.0;
    // depth is 1-based for the depth-penalty variant: the root split gets
    // lambda^1, matching the flat penalty there.
    const int depth1 = ctx.depth + 1;

    for (int f : candidates) {
      auto s = finder.best_for_feature(rows, f, stats);
      if (!s) continue;
      if (fs_->contains(f)) {
        if (!best_in || s->gain > best_in->gain) best_in = s;
      } else {
        const double penalized = regularized_gain(f, s->gain, *fs_, lambda_, depth1, pc_);
        if (penalized <= 0.0) continue;
        if (!best_out || penalized > best_out_penalized) {
          best_out = s;
          best_out_penalized = penalized;
        }
      }
    }

    // In-set features split freely; an outside feature must first win the
    // penalized ranking among the drawn candidates and then clear the entry
    // rule.
    const bool outside_wins = best_out && (!best_in || best_out_penalized > best_in->gain);
    if (outside_wins) {
      bool enters = false;
      switch (rule_) {
        case EntryRule::positive_gain:
          enters = true;  // any strictly positive penalized gain
          break;
        case EntryRule::beat_in_set:
          // Must beat the best raw gain the current feature set can achieve
          // at this node, whether or not those features were drawn.
          enters = best_out_penalized > in_set_bar(rows, candidates, stats, best_in, finder);
          break;
        case EntryRule::beat_parent:
          enters = best_out_penalized > ctx.parent_gain;
          break;
      }
      if (enters) {
        fs_->add(best_out->feature, tree_);
        return best_out;
      }
    }
    return best_in;
  }

 private:
  // Best raw gain any current member could achieve at this node. Members
  // already scanned as drawn candidates are covered by best_in.
  double in_set_bar(std::span<const int> rows, std::span<const int> candidates, const NodeStats& stats,
                    const std::optional<Split>& best_in, SplitFinder& finder) const {
    double bar = best_in ? best_in->gain : 0.0;
    for (int f : fs_->members()) {
      if (std::binary_search(candidates.begin(), candidates.end(), f)) continue;
      const auto s = finder.best_for_feature(rows, f, stats);
      if (s && s->gain > bar) bar = s->gain;
    }
    return bar;
  }

  FeatureSet* fs_;
  std::span<const double> lambda_;
  PenaltyConfig pc_;
  EntryRule rule_;
  int tree_ = 0;
};

}  // namespace

RegularizedForest train_regularized_forest(const Matrix& x, std::span<const double> target,
                                           std::span<const double> lambda, FeatureSet fs0, const ForestConfig& cfg,
                                           const PenaltyConfig& pc, EntryRule rule) {
  if (static_cast<int>(lambda.size()) != x.cols())
    throw std::invalid_argument("regularized forest: penalty vector length != feature count");
  for (double lj : lambda)
    if (lj < 0.0 || lj > 1.0) throw std::invalid_argument("regularized forest: penalties must lie in [0,1]");

  RegularizedForest out;
  out.feature_set = std::move(fs0);
  out.forest.num_features = x.cols();
  out.forest.trees.reserve(static_cast<std::size_t>(cfg.num_trees));

  RegularizedChooser chooser(out.feature_set, lambda, pc, rule);
  TreeGrower::Options opt;
  opt.cfg = cfg;
  opt.pool_size = x.cols();
  opt.mtry = cfg.mtry > 0 ? std::min(cfg.mtry, x.cols()) : default_mtry(x.cols());
  TreeGrower grower;

  // Strictly sequential: the evolving feature set couples the trees.
  for (int b = 0; b < cfg.num_trees; ++b) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(b)));
    std::vector<int> rows = bootstrap_rows(x.rows(), cfg.sample_fraction, rng);
    chooser.set_tree(b);
    out.forest.trees.push_back(grower.grow(x, target, std::move(rows), rng, opt, std::ref(chooser)));
  }
  return out;
}

std::vector<double> clip_probabilities(std::vector<double> e, double eps, double* clip_rate) {
  int clipped = 0;
  for (double& v : e) {
    if (v < eps) {
      v = eps;
      ++clipped;
    } else if (v > 1.0 - eps) {
      v = 1.0 - eps;
      ++clipped;
    }
  }
  if (clip_rate) *clip_rate = e.empty() ? 0.0 : static_cast<double>(clipped) / static_cast<double>(e.size());
  return e;
}

Matrix outcome_design(const Dataset& data) {
  Matrix design(data.n(), data.p() + 1);
  for (int i = 0; i < data.n(); ++i) design(i, 0) = static_cast<double>(data.d[static_cast<std::size_t>(i)]);
  for (int j = 0; j < data.p(); ++j) {
    auto src = data.x.col(j);
    auto dst = design.col(j + 1);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return design;
}

PropensityFit fit_regularized_propensity(const Dataset& data, const ImportanceVector& imp_x,
                                         const ForestConfig& fc_prop, const OarfOptions& opt) {
  const int treated = data.n_treated();
  if (treated == 0 || treated == data.n())
    throw std::invalid_argument("propensity fit: both treatment classes must be present");

  const std::vector<double> lambda = penalty_vector(imp_x, opt.penalty);
  FeatureSet fs0 = opt.use_initial_feature_set && !imp_x.degenerate ? initial_feature_set(imp_x)
                                                                    : FeatureSet(data.p());
  const std::vector<double> target = target_values(data, Target::treatment);

  RegularizedForest reg = train_regularized_forest(data.x, target, lambda, std::move(fs0), fc_prop, opt.penalty,
                                                   opt.rule);

  PropensityFit fit;
  fit.e_hat = clip_probabilities(reg.forest.predict_rows(data.x), kPropensityClip, &fit.clip_rate);
  fit.selected = reg.forest.features_used();
  fit.forest = std::move(reg.forest);
  fit.final_feature_set = std::move(reg.feature_set);
  fit.degenerate_importance = imp_x.degenerate;
  return fit;
}

ImportanceVector outcome_importance(const Dataset& data, const ForestConfig& fc_outcome) {
  const Matrix design = outcome_design(data);
  // The treatment column joins every candidate draw: the outcome model must
  // condition on D throughout, otherwise covariates that only drive the
  // treatment pick up its effect on Y and earn spurious importance.
  const int forced[] = {0};
  const ImportanceVector imp_full = air_importance(design, data.y, fc_outcome, forced);
  std::vector<double> raw_x(imp_full.raw.begin() + 1, imp_full.raw.end());
  return make_importance(std::move(raw_x));
}

OarfFit fit_oarf(const Dataset& data, const ForestConfig& fc_outcome, const ForestConfig& fc_prop,
                 const OarfOptions& opt) {
  data.validate();
  const int treated = data.n_treated();
  if (treated == 0 || treated == data.n())
    throw std::invalid_argument("oarf: both treatment classes must be present");
  if (data.n() < 2 * fc_outcome.min_node_size)
    throw std::invalid_argument("oarf: need at least 2*min_node_size observations");

  ImportanceVector imp_x = outcome_importance(data, fc_outcome);

  OarfFit fit;
  fit.propensity = fit_regularized_propensity(data, imp_x, fc_prop, opt);
  fit.lambda = penalty_vector(imp_x, opt.penalty);
  fit.importance = std::move(imp_x);
  return fit;
}

}  // namespace oarf
