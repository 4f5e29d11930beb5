#pragma once

#include <string>
#include <vector>

#include "patchgt/graph.hpp"
#include "patchgt/matrix.hpp"

namespace patchgt {

struct SpectralDecomposition {
    std::vector<double> eigenvalues;  // ascending, clamped into [0,2]
    Mat eigenvectors;                 // n x n; column j belongs to eigenvalues[j]
};

struct PatchPartition {
    std::vector<int> assignment;  // node -> patch id; every id in 0..k-1 occurs
    int k = 1;
    std::vector<int> patch_sizes;
    double gamma = 0.0;
    // All embedding rows were identical while k > 1 was requested; the
    // partition fell back to a single patch.
    bool degenerate_fallback = false;
};

struct KMeansResult {
    std::vector<int> assignment;
    int k = 0;  // nonempty clusters (can be < requested for duplicate-heavy input)
    bool degenerate_fallback = false;
};

// L = I - D^{-1/2} A D^{-1/2}; rows/columns of isolated nodes are bare
// identity entries (D^{-1/2}_ii taken as 0).
Mat normalized_laplacian(const Graph& g);

// Fixed-order cyclic Jacobi. Deterministic for identical input bits:
// convergence when every off-diagonal magnitude < 1e-12, 100-sweep cap
// (NumericError with the residual beyond that). Eigenvalues within 1e-10
// outside [0,2] snap to the boundary; anything further out means the input
// was not a normalized Laplacian and raises NumericError. Each eigenvector
// column gets a canonical sign (first decisive odd moment made positive) so
// equal-up-to-relabeling inputs produce comparable embeddings.
SpectralDecomposition eigendecompose(const Mat& laplacian);

// Smallest k with eigenvalues[0..k-1] <= gamma + 1e-10 counted inclusively,
// floored at 1.
int select_k(const std::vector<double>& eigenvalues, double gamma);

// Deterministic Lloyd's on the rows of `points`. Seeding is a pure function
// of the multiset of rows: first seed is the lexicographically smallest row,
// each next seed maximizes its distance to the chosen seeds (lexicographic
// coordinate tie-break, never input order). Assignment ties go to the lowest
// cluster id; centroid sums run in sorted-row order so results are
// bit-identical under input row permutation. Empty clusters are repaired by
// splitting the cluster with the largest within-cluster scatter at its
// farthest member; 300-iteration cap. A single-point refinement pass then
// moves individual points while the total scatter strictly drops, which
// rescues the symmetric configurations Lloyd's parks in poor local minima.
KMeansResult kmeans(const Mat& points, int k);

// Spectral patch segmentation: k = select_k(spectrum, gamma), then k-means on
// the rows of the first k eigenvector columns. gamma must lie in [0,2].
PatchPartition segment(const Graph& g, double gamma);

// Coarse 0/1 adjacency: entry (a,b) = 1 iff some edge joins patches a and b;
// the diagonal keeps (a,a) = 1 iff patch a has an internal edge.
Mat coarse_graph(const Graph& g, const PatchPartition& partition);

// Disk cache of segmentations keyed by (graph content digest, gamma):
// a JSON array of {graph_digest, gamma, assignment, k} records.
struct SegmentationRecord {
    std::string graph_digest;
    double gamma = 0.0;
    std::vector<int> assignment;
    int k = 1;
};

std::vector<SegmentationRecord> load_segmentation_cache(const std::string& path);
void save_segmentation_cache(const std::vector<SegmentationRecord>& records,
                             const std::string& path);

// Segments every graph (cache consulted first when cache_path is non-empty,
// then extended on disk). `jobs` caps worker threads; results do not depend
// on the thread count.
std::vector<PatchPartition> segment_dataset(const Dataset& ds, double gamma,
                                            const std::string& cache_path = "",
                                            int jobs = 1);

}  // namespace patchgt
