#pragma once

#include <vector>

namespace robustmal {

// Area under the ROC curve as the Mann-Whitney statistic: the probability
// that a random positive outscores a random negative, ties counting 1/2.
// Uses mid-ranks, O(n log n). Throws kSingleClass when a class is missing.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace robustmal
