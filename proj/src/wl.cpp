#include "patchgt/wl.hpp"

#include <algorithm>
#include <map>

namespace patchgt {

namespace {

// Dense ids in sorted-key order: the id of a node's encoding depends only on
// the multiset of encodings present, never on node numbering.
std::vector<int> canonical_ids(const std::vector<std::vector<int>>& encodings) {
    std::map<std::vector<int>, int> dictionary;
    for (const auto& e : encodings) dictionary.emplace(e, 0);
    int next = 0;
    for (auto& [key, id] : dictionary) id = next++;
    std::vector<int> ids(encodings.size());
    for (size_t i = 0; i < encodings.size(); ++i) ids[i] = dictionary.at(encodings[i]);
    return ids;
}

}  // namespace

WLColoring wl_refine(const Graph& g, const std::vector<int>* initial_colors) {
    g.validate();  // refinement semantics assume a simple graph
    const int n = g.num_nodes;

    std::vector<std::vector<int>> neighbors(n);
    for (auto [u, v] : g.edges) {
        neighbors[u].push_back(v);
        neighbors[v].push_back(u);
    }

    WLColoring out;
    if (initial_colors) {
        if ((int)initial_colors->size() != n)
            throw ContractError("wl_refine: initial_colors length mismatch");
        std::vector<std::vector<int>> as_keys(n);
        for (int i = 0; i < n; ++i) as_keys[i] = {(*initial_colors)[i]};
        out.colors = canonical_ids(as_keys);
    } else {
        out.colors.assign(n, 0);
    }

    auto class_count = [](const std::vector<int>& colors) {
        return colors.empty() ? 0 : 1 + *std::max_element(colors.begin(), colors.end());
    };

    int classes = class_count(out.colors);
    // Each round the partition refines or is already stable, so class count
    // reaching a fixpoint ends the loop; that takes at most n rounds.
    for (int round = 0; round < n; ++round) {
        std::vector<std::vector<int>> encodings(n);
        for (int i = 0; i < n; ++i) {
            std::vector<int> e;
            e.reserve(neighbors[i].size() + 1);
            e.push_back(out.colors[i]);
            for (int w : neighbors[i]) e.push_back(out.colors[w]);
            std::sort(e.begin() + 1, e.end());
            encodings[i] = std::move(e);
        }
        std::vector<int> next = canonical_ids(encodings);
        int next_classes = class_count(next);
        out.colors = std::move(next);
        if (next_classes == classes) break;
        classes = next_classes;
        ++out.rounds_to_stable;
    }

    for (int c : out.colors) ++out.histogram[c];
    return out;
}

bool wl_distinguishable(const Graph& g1, const Graph& g2) {
    Graph joint;
    joint.num_nodes = g1.num_nodes + g2.num_nodes;
    joint.edges = g1.edges;
    for (auto [u, v] : g2.edges)
        joint.edges.emplace_back(u + g1.num_nodes, v + g1.num_nodes);
    std::sort(joint.edges.begin(), joint.edges.end());
    joint.node_features.assign(joint.num_nodes, {1.0});

    WLColoring joint_coloring = wl_refine(joint);
    std::map<int, int> h1, h2;
    for (int i = 0; i < g1.num_nodes; ++i) ++h1[joint_coloring.colors[i]];
    for (int i = 0; i < g2.num_nodes; ++i)
        ++h2[joint_coloring.colors[g1.num_nodes + i]];
    return h1 != h2;
}

}  // namespace patchgt
