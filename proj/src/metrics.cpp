#include "patchgt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchgt/errors.hpp"

namespace patchgt {

double accuracy(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size())
        throw ContractError("accuracy: score and label counts disagree");
    size_t labeled = 0, correct = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(labels[i])) continue;
        ++labeled;
        if ((scores[i] > 0.5) == (labels[i] > 0.5)) ++correct;
    }
    if (labeled == 0) throw ContractError("accuracy: no labeled examples");
    return (double)correct / (double)labeled;
}

double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size())
        throw ContractError("roc_auc: score and label counts disagree");
    std::vector<std::pair<double, bool>> pts;  // (score, is_positive)
    for (size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(labels[i])) continue;
        pts.emplace_back(scores[i], labels[i] > 0.5);
    }
    size_t pos = 0;
    for (const auto& [s, p] : pts) pos += p ? 1 : 0;
    const size_t neg = pts.size() - pos;
    if (pos == 0 || neg == 0)
        throw NumericError("roc_auc: undefined with a single class present");

    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Average ranks within tied score blocks keep every rank an exact
    // multiple of one half, so the statistic matches pairwise counting
    // bit for bit.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < pts.size()) {
        size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) ++j;
        const double avg_rank = ((double)(i + 1) + (double)j) / 2.0;  // 1-based
        for (size_t r = i; r < j; ++r)
            if (pts[r].second) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - (double)pos * ((double)pos + 1.0) / 2.0;
    return u / ((double)pos * (double)neg);
}

}  // namespace patchgt
