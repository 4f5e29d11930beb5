#pragma once

#include <vector>

namespace patchgt {

// Fraction of labeled examples whose thresholded score (> 0.5 predicts the
// positive class) matches the label. NaN labels are skipped; at least one
// labeled example is required (ContractError otherwise).
double accuracy(const std::vector<double>& scores, const std::vector<double>& labels);

// Probability that a uniformly random positive example outranks a uniformly
// random negative one, ties counted one half (the Mann-Whitney statistic,
// computed through average ranks). NaN labels are skipped. Needs at least
// one example of each class, else NumericError: the metric is undefined.
double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels);

}  // namespace patchgt
