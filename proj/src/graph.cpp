#include "patchgt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

#include "patchgt/errors.hpp"
#include "patchgt/rng.hpp"

namespace patchgt {

void Graph::validate() const {
    if (num_nodes < 0) throw ContractError("graph: negative node count");
    if (!node_features.empty() && (int)node_features.size() != num_nodes)
        throw ContractError("graph: node_features row count != num_nodes");
    for (const auto& row : node_features)
        if ((int)row.size() != feat_dim())
            throw ContractError("graph: ragged node_features");
    if (!edge_features.empty() && edge_features.size() != edges.size())
        throw ContractError("graph: edge_features row count != edge count");
    for (const auto& row : edge_features)
        if ((int)row.size() != edge_dim())
            throw ContractError("graph: ragged edge_features");
    for (size_t e = 0; e < edges.size(); ++e) {
        auto [u, v] = edges[e];
        if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes)
            throw ContractError("graph: edge endpoint out of range");
        if (u == v) throw ContractError("graph: self-loop in canonical edge list");
        if (u > v) throw ContractError("graph: edge not in (min,max) form");
        if (e > 0 && !(edges[e - 1] < edges[e]))
            throw ContractError("graph: edges not sorted/unique");
    }
}

void canonicalize_edges(std::vector<std::pair<int, int>>& edges,
                        std::vector<std::vector<double>>* edge_features,
                        int* dropped_self_loops, int* dropped_duplicates) {
    const bool with_feats = edge_features && !edge_features->empty();
    if (with_feats && edge_features->size() != edges.size())
        throw ContractError("canonicalize_edges: feature rows != edge count");

    std::vector<size_t> order(edges.size());
    std::iota(order.begin(), order.end(), 0);
    for (auto& e : edges)
        if (e.first > e.second) std::swap(e.first, e.second);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return edges[i] < edges[j]; });

    std::vector<std::pair<int, int>> kept;
    std::vector<std::vector<double>> kept_feats;
    for (size_t idx : order) {
        const auto& e = edges[idx];
        if (e.first == e.second) {
            if (dropped_self_loops) ++*dropped_self_loops;
            continue;
        }
        if (!kept.empty() && kept.back() == e) {
            if (dropped_duplicates) ++*dropped_duplicates;
            continue;
        }
        kept.push_back(e);
        if (with_feats) kept_feats.push_back((*edge_features)[idx]);
    }
    edges = std::move(kept);
    if (with_feats) *edge_features = std::move(kept_feats);
}

Mat adjacency_matrix(const Graph& g) {
    Mat a(g.num_nodes, g.num_nodes);
    for (auto [u, v] : g.edges) {
        a.at(u, v) = 1.0;
        a.at(v, u) = 1.0;
    }
    return a;
}

Permutation Permutation::identity(int n) {
    Permutation p;
    p.map.resize(n);
    std::iota(p.map.begin(), p.map.end(), 0);
    return p;
}

Permutation Permutation::random(int n, Rng& rng) {
    Permutation p = identity(n);
    rng.shuffle(p.map);
    return p;
}

void Permutation::validate(int n) const {
    if ((int)map.size() != n) throw ContractError("permutation: size != num_nodes");
    std::vector<char> seen(n, 0);
    for (int v : map) {
        if (v < 0 || v >= n || seen[v]) throw ContractError("permutation: not a bijection");
        seen[v] = 1;
    }
}

Graph permute_graph(const Graph& g, const Permutation& p) {
    p.validate(g.num_nodes);
    Graph out;
    out.num_nodes = g.num_nodes;
    out.labels = g.labels;
    if (!g.node_features.empty()) {
        out.node_features.resize(g.num_nodes);
        for (int i = 0; i < g.num_nodes; ++i) out.node_features[p.map[i]] = g.node_features[i];
    }
    out.edges.reserve(g.edges.size());
    for (auto [u, v] : g.edges) out.edges.emplace_back(p.map[u], p.map[v]);
    out.edge_features = g.edge_features;
    canonicalize_edges(out.edges, &out.edge_features);
    return out;
}

namespace {

void fnv_bytes(uint64_t& h, const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
}

void fnv_double(uint64_t& h, double v) {
    if (std::isnan(v)) v = std::numeric_limits<double>::quiet_NaN();  // single NaN payload
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    fnv_bytes(h, &bits, sizeof bits);
}

}  // namespace

std::string graph_digest(const Graph& g) {
    uint64_t h = 0xCBF29CE484222325ULL;
    int32_t n = g.num_nodes;
    fnv_bytes(h, &n, sizeof n);
    for (auto [u, v] : g.edges) {
        int32_t uu = u, vv = v;
        fnv_bytes(h, &uu, sizeof uu);
        fnv_bytes(h, &vv, sizeof vv);
    }
    int32_t fd = g.feat_dim(), ed = g.edge_dim(), lt = (int32_t)g.labels.size();
    fnv_bytes(h, &fd, sizeof fd);
    fnv_bytes(h, &ed, sizeof ed);
    fnv_bytes(h, &lt, sizeof lt);
    for (const auto& row : g.node_features)
        for (double v : row) fnv_double(h, v);
    for (const auto& row : g.edge_features)
        for (double v : row) fnv_double(h, v);
    for (double v : g.labels) fnv_double(h, v);

    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return std::string(buf);
}

bool graphs_equal(const Graph& a, const Graph& b) {
    auto same_value = [](double x, double y) {
        return (std::isnan(x) && std::isnan(y)) || x == y;
    };
    auto same_rows = [&](const std::vector<std::vector<double>>& x,
                         const std::vector<std::vector<double>>& y) {
        if (x.size() != y.size()) return false;
        for (size_t i = 0; i < x.size(); ++i) {
            if (x[i].size() != y[i].size()) return false;
            for (size_t j = 0; j < x[i].size(); ++j)
                if (!same_value(x[i][j], y[i][j])) return false;
        }
        return true;
    };
    if (a.num_nodes != b.num_nodes || a.edges != b.edges) return false;
    if (!same_rows(a.node_features, b.node_features)) return false;
    if (!same_rows(a.edge_features, b.edge_features)) return false;
    if (a.labels.size() != b.labels.size()) return false;
    for (size_t i = 0; i < a.labels.size(); ++i)
        if (!same_value(a.labels[i], b.labels[i])) return false;
    return true;
}

}  // namespace patchgt
