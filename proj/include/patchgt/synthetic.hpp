#pragma once

#include <cstdint>

#include "patchgt/graph.hpp"

namespace patchgt {

// Balanced binary corpus of small connected graphs whose 2-d node features
// are mean-shifted by the label sign, so even a linear head on any readout
// separates the classes. Exercises optimizers and fold plumbing without any
// on-disk corpus.
Dataset synthetic_separable(int count, uint64_t seed);

// Connected graphs with node counts uniform in [min_nodes, max_nodes] and
// all-ones features; the segmentation sweep corpus.
std::vector<Graph> synthetic_connected_corpus(int count, int min_nodes, int max_nodes,
                                              uint64_t seed);

}  // namespace patchgt
