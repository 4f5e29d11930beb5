#pragma once

#include <map>
#include <vector>

#include "patchgt/graph.hpp"

namespace patchgt {

struct WLColoring {
    std::vector<int> colors;   // dense ids 0..c-1, canonical under relabeling
    int rounds_to_stable = 0;  // rounds that strictly refined the partition
    std::map<int, int> histogram;
};

// 1-WL color refinement: repeatedly replace every node's color with a dense
// id for (own color, sorted multiset of neighbor colors) until the partition
// stops changing. Ids are assigned in sorted encoding order each round, so
// the result is independent of node numbering. Starts uniform unless
// initial_colors is given (arbitrary ints, canonicalized before round one).
WLColoring wl_refine(const Graph& g, const std::vector<int>* initial_colors = nullptr);

// True iff the stable color histograms of g1 and g2 differ when refined
// jointly on their disjoint union. False negatives are inherent: 1-WL cannot
// separate e.g. two distinct regular graphs of equal size and degree.
bool wl_distinguishable(const Graph& g1, const Graph& g2);

}  // namespace patchgt
