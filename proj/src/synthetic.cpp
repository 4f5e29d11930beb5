#include "patchgt/synthetic.hpp"

#include <algorithm>

#include "patchgt/errors.hpp"
#include "patchgt/rng.hpp"

namespace patchgt {

namespace {

// Random spanning tree plus extra edges: connected, no isolated nodes.
Graph random_connected(Rng& rng, int n, double extra) {
    Graph g;
    g.num_nodes = n;
    for (int v = 1; v < n; ++v)
        g.edges.emplace_back((int)rng.uniform_int((uint64_t)v), v);
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (rng.uniform01() < extra) g.edges.emplace_back(u, v);
    canonicalize_edges(g.edges);
    return g;
}

}  // namespace

Dataset synthetic_separable(int count, uint64_t seed) {
    if (count < 2) throw ContractError("synthetic_separable: needs at least 2 graphs");
    Rng rng(seed);
    Dataset ds;
    ds.name = "synthetic-separable";
    ds.num_tasks = 1;
    ds.metric = Metric::accuracy;
    for (int i = 0; i < count; ++i) {
        const int label = i % 2;  // balanced by construction
        Graph g = random_connected(rng, 6 + (int)rng.uniform_int(5), 0.25);
        const double shift = label ? 0.8 : -0.8;
        g.node_features.assign(g.num_nodes, std::vector<double>(2));
        for (auto& row : g.node_features)
            for (double& v : row) v = shift + 0.3 * rng.normal();
        g.labels = {(double)label};
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

std::vector<Graph> synthetic_connected_corpus(int count, int min_nodes, int max_nodes,
                                              uint64_t seed) {
    if (min_nodes < 1 || max_nodes < min_nodes)
        throw ContractError("synthetic_connected_corpus: bad node range");
    Rng rng(seed);
    std::vector<Graph> out;
    for (int i = 0; i < count; ++i) {
        const int n = min_nodes + (int)rng.uniform_int((uint64_t)(max_nodes - min_nodes + 1));
        Graph g = random_connected(rng, n, 0.2);
        g.node_features.assign(n, {1.0});
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace patchgt
