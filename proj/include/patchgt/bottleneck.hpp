#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchgt/graph.hpp"
#include "patchgt/matrix.hpp"
#include "patchgt/rng.hpp"

namespace patchgt {

// One perturbation experiment on a two-cluster regular graph: clusters S and
// T of a tau-regular graph joined by exactly cut_edges cross edges, probed by
// an L-layer GNN. Measures how hard it is for a signal injected into S to
// reach T, relative to a signal injected into T itself.
struct BottleneckInstance {
    int tau = 3;
    int size_s = 10;
    int size_t_ = 10;  // trailing underscore dodges the size_t type name
    int cut_edges = 2;
    int layers = 3;
    double epsilon = 1e-3;
    int trials = 200;
    int dim = 4;  // node feature width d

    void validate() const;  // throws ConfigError
};

// The cross-to-internal response ceiling 2mL/|T| for an instance.
double bound_value(const BottleneckInstance& inst);

// Builds the instance's graph: nodes [0, size_s) form S, [size_s, n) form T,
// every node has degree tau, and exactly cut_edges edges cross the cut. Each
// cluster is a circulant with cut endpoints one short internally, matched
// across. Throws ConfigError naming the violated parity when tau, the sizes
// and cut_edges cannot coexist; the returned graph is degree-audited.
Graph build_two_cluster_regular(int tau, int n_s, int n_t, int cut_edges);

struct RatioStats {
    double max_ratio = 0.0;
    double mean_ratio = 0.0;
    int used = 0;
    int discarded = 0;  // zero-denominator draws, skipped
};

// Samples `trials` random configurations: per-layer weight pairs with
// L1-induced norm exactly 1 (columns normalized), a uniform(0,1) base input,
// and +-epsilon sign patterns alpha (rows of S) and beta (rows of T). Runs
// the L-layer relu GNN once per perturbation; sum_T |dH| under alpha samples
// the cross response, sum_T |dH| under beta the internal one. Both responses
// estimate maxima, so the ratio divides each sampled cross response by the
// largest internal response seen, across all draws and the identity
// reference configuration (whose uniform perturbation beats any sign
// pattern). Every ratio then sits under bound_value(inst). A draw whose own
// internal response is zero is degenerate and only counted as discarded.
RatioStats node_ratio(const BottleneckInstance& inst, Rng& rng);

// The hand-built reference configuration: identity weights, all-ones input,
// +epsilon on every entry of T. With no cross edges the response on T is
// exactly (1+tau)^L * epsilon * |T| * d; cross edges leak a little mass into
// S, so the value drops below that.
double identity_config_response(const BottleneckInstance& inst);

// Patch-level counterpart. Node outputs are taken as the uniform (1+tau)^L
// column the identity configuration produces on an isolated tau-regular
// cluster, mean-aggregated into z_S and z_T, then pushed through the
// two-node coarse layer g_T = relu(z_T W1^T + z_S W2^T). Returns the L1
// response of g_T to the S-side perturbation over its response to the T-side
// one. Defaults w1 = (|S|/|V|) I and w2 = (|T|/|V|) I, the scaling that makes
// the ratio land on 1 regardless of the size imbalance.
double patch_ratio(const BottleneckInstance& inst, const Mat* w1 = nullptr,
                   const Mat* w2 = nullptr);

// The sweep the `bottleneck` subcommand runs: every combination of the axes
// below, infeasible parity combinations recorded as skipped.
struct BottleneckGrid {
    std::vector<int> taus{2, 3, 4};
    std::vector<int> cuts{1, 2, 4};
    std::vector<int> layers{2, 3, 5};
    std::vector<int> t_sizes{10, 20};  // |T|, with |S| = |T|
    int trials = 200;
    double epsilon = 1e-3;
    int dim = 4;

    void validate() const;
};

BottleneckGrid bottleneck_grid_from_json_text(const std::string& text,
                                              const std::string& origin);

struct GridEntry {
    BottleneckInstance inst;
    bool feasible = false;
    std::string skip_reason;
    double bound = 0.0;
    RatioStats node;
    double patch = 0.0;
};

// Runs the grid with one derived rng per instance, so the worker count never
// changes the numbers. jobs caps the worker threads.
std::vector<GridEntry> run_bottleneck_grid(const BottleneckGrid& grid, uint64_t seed,
                                           int jobs = 1);

// Report consumed by the CLI: per-instance ratios and bounds, the
// non-decreasing-in-m trend diagnostic, and the standing caveat that random
// search certifies non-violation of the bound, never its tightness.
std::string bottleneck_report_json(const std::vector<GridEntry>& entries);

}  // namespace patchgt
