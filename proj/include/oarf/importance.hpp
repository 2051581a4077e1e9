#pragma once

#include <span>
#include <vector>

#include "oarf/dataset.hpp"
#include "oarf/forest.hpp"

namespace oarf {

// Actual-impurity-reduction scores. raw may be negative; clipped floors at
// zero; normalized divides by the clipped maximum so the scale is [0,1]
// with max exactly 1 unless everything clipped to zero (degenerate).
struct ImportanceVector {
  std::vector<double> raw;
  std::vector<double> clipped;
  std::vector<double> normalized;
  bool degenerate = false;
};

ImportanceVector make_importance(std::vector<double> raw);

// AIR variable importance: builds a bagged forest on a 2p design where
// columns p..2p-1 are per-tree permuted copies of columns 0..p-1, draws
// split candidates from all 2p columns, and credits each original feature
// with its executed gains minus the gains earned by its shadow.
// forced_candidates (original-column indices) join every node's draw.
ImportanceVector air_importance(const Matrix& x, std::span<const double> y, const ForestConfig& cfg,
                                std::span<const int> forced_candidates = {});

ImportanceVector air_importance(const Dataset& data, const ForestConfig& cfg, Target target);

}  // namespace oarf
