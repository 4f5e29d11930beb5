#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchgt/matrix.hpp"

namespace patchgt {

// Undirected graph. Edges are stored once, canonically: (min,max), sorted
// lexicographically, no duplicates, no self-loops. edge_features rows follow
// that canonical order. Missing labels are NaN (masked out of the loss).
struct Graph {
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<std::vector<double>> node_features;  // num_nodes x feat_dim
    std::vector<std::vector<double>> edge_features;  // edges.size() x edge_dim, or empty
    std::vector<double> labels;                      // num_tasks entries, NaN = missing

    int feat_dim() const { return node_features.empty() ? 0 : (int)node_features[0].size(); }
    int edge_dim() const { return edge_features.empty() ? 0 : (int)edge_features[0].size(); }

    // Shape and canonical-form checks; throws ContractError on violation.
    void validate() const;
};

enum class Metric { accuracy, roc_auc };

struct Dataset {
    std::string name;
    std::vector<Graph> graphs;
    int num_tasks = 0;
    Metric metric = Metric::accuracy;
};

// p[i] is the new index of old node i; must be a bijection on [0, n).
struct Permutation {
    std::vector<int> map;

    static Permutation identity(int n);
    static Permutation random(int n, class Rng& rng);
    void validate(int n) const;
};

// Sorts, deduplicates and flips edges into canonical form; self-loops and
// duplicates are dropped and counted into the optional counters.
void canonicalize_edges(std::vector<std::pair<int, int>>& edges,
                        std::vector<std::vector<double>>* edge_features = nullptr,
                        int* dropped_self_loops = nullptr, int* dropped_duplicates = nullptr);

// Dense symmetric 0/1 adjacency with zero diagonal.
Mat adjacency_matrix(const Graph& g);

// Relabels nodes through p: new node p[i] carries old node i's features; edges
// re-canonicalized; labels unchanged.
Graph permute_graph(const Graph& g, const Permutation& p);

// Content digest (FNV-1a 64 over the canonical serialization), hex string.
// Keys the segmentation cache.
std::string graph_digest(const Graph& g);

// Structural equality; NaN labels compare equal to NaN.
bool graphs_equal(const Graph& a, const Graph& b);

// TU-format corpus directory: <dir>/<NAME>_A.txt, _graph_indicator.txt,
// _graph_labels.txt, optional _node_labels.txt / _edge_labels.txt.
// Categorical node/edge labels are one-hot encoded (dimension = distinct
// values across the corpus, in sorted value order); graphs without node
// labels get the all-ones scalar feature. Graph labels are remapped to
// 0..C-1 in sorted value order: C==2 gives one task with targets {0,1},
// C>2 gives C one-vs-rest tasks with one-hot targets.
Dataset load_tu_dataset(const std::string& dir, const std::string& name);

// Resolves a corpus name against --data-dir / PATCHGT_DATA_DIR (in that
// order), expecting <root>/<name>/ in TU layout. A path to a .json file is
// loaded with load_json_graphs instead.
Dataset resolve_dataset(const std::string& name_or_path, const std::string& data_dir_flag);

// JSON graph list: [{"num_nodes":N,"edges":[[i,j],...],"node_features":[[..]],
// "edge_features":[[..]],"labels":[..]}, ...]. Absent node_features default to
// the all-ones scalar; null labels are NaN.
Dataset load_json_graphs(const std::string& path, const std::string& name = "json");
void save_json_graphs(const Dataset& ds, const std::string& path);

}  // namespace patchgt
