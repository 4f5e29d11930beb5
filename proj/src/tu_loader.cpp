#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "patchgt/errors.hpp"
#include "patchgt/graph.hpp"

namespace patchgt {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Non-empty trimmed lines paired with their 1-based line numbers.
std::vector<std::pair<long, std::string>> read_lines(const std::string& path, bool required) {
    std::ifstream in(path);
    if (!in) {
        if (required) throw IngestError(path, "missing required file");
        return {};
    }
    std::vector<std::pair<long, std::string>> out;
    std::string line;
    long no = 0;
    while (std::getline(in, line)) {
        ++no;
        std::string t = trim(line);
        if (!t.empty()) out.emplace_back(no, t);
    }
    return out;
}

long parse_long(const std::string& path, long line_no, const std::string& tok) {
    try {
        size_t pos = 0;
        long v = std::stol(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw IngestError(path, line_no, "expected an integer, got '" + tok + "'");
    }
}

// Value -> one-hot slot, slots ordered by sorted value.
std::map<long, int> slot_map(const std::set<long>& values) {
    std::map<long, int> m;
    int slot = 0;
    for (long v : values) m[v] = slot++;
    return m;
}

}  // namespace

Dataset load_tu_dataset(const std::string& dir, const std::string& name) {
    namespace fs = std::filesystem;
    const std::string base = (fs::path(dir) / (name + "_")).string();
    const std::string a_path = base + "A.txt";
    const std::string ind_path = base + "graph_indicator.txt";
    const std::string glab_path = base + "graph_labels.txt";
    const std::string nlab_path = base + "node_labels.txt";
    const std::string elab_path = base + "edge_labels.txt";

    auto ind_lines = read_lines(ind_path, true);
    auto glab_lines = read_lines(glab_path, true);
    auto a_lines = read_lines(a_path, true);
    auto nlab_lines = read_lines(nlab_path, false);
    auto elab_lines = read_lines(elab_path, false);

    const long num_nodes_total = (long)ind_lines.size();
    const long num_graphs = (long)glab_lines.size();
    if (num_graphs == 0) throw IngestError(glab_path, "no graphs");

    // node -> graph, node -> index local to its graph
    std::vector<int> node_graph(num_nodes_total), node_local(num_nodes_total);
    std::vector<int> graph_size(num_graphs, 0);
    for (long i = 0; i < num_nodes_total; ++i) {
        auto [line_no, tok] = ind_lines[i];
        long gid = parse_long(ind_path, line_no, tok);
        if (gid < 1 || gid > num_graphs)
            throw IngestError(ind_path, line_no,
                              "graph id " + std::to_string(gid) + " out of range 1.." +
                                  std::to_string(num_graphs));
        node_graph[i] = (int)(gid - 1);
        node_local[i] = graph_size[gid - 1]++;
    }

    // Node labels -> one-hot feature slots (all-ones scalar when absent).
    std::vector<long> node_label(num_nodes_total, 0);
    std::set<long> node_label_values;
    const bool have_node_labels = !nlab_lines.empty();
    if (have_node_labels) {
        if ((long)nlab_lines.size() != num_nodes_total)
            throw IngestError(nlab_path, "expected " + std::to_string(num_nodes_total) +
                                             " lines, got " + std::to_string(nlab_lines.size()));
        for (long i = 0; i < num_nodes_total; ++i) {
            node_label[i] = parse_long(nlab_path, nlab_lines[i].first, nlab_lines[i].second);
            node_label_values.insert(node_label[i]);
        }
    }
    auto node_slot = slot_map(node_label_values);

    // Graph labels -> class ids 0..C-1 in sorted value order.
    std::vector<long> graph_label(num_graphs);
    std::set<long> graph_label_values;
    for (long g = 0; g < num_graphs; ++g) {
        graph_label[g] = parse_long(glab_path, glab_lines[g].first, glab_lines[g].second);
        graph_label_values.insert(graph_label[g]);
    }
    auto class_of = slot_map(graph_label_values);
    const int num_classes = (int)class_of.size();
    const int num_tasks = num_classes <= 2 ? 1 : num_classes;

    // Edges, with optional labels aligned to A-file lines.
    const bool have_edge_labels = !elab_lines.empty();
    if (have_edge_labels && elab_lines.size() != a_lines.size())
        throw IngestError(elab_path, "expected " + std::to_string(a_lines.size()) +
                                         " lines (one per edge entry), got " +
                                         std::to_string(elab_lines.size()));
    std::set<long> edge_label_values;
    struct RawEdge {
        int u, v;
        long label;
    };
    std::vector<std::vector<RawEdge>> graph_edges(num_graphs);
    for (size_t e = 0; e < a_lines.size(); ++e) {
        auto [line_no, tok] = a_lines[e];
        size_t comma = tok.find(',');
        if (comma == std::string::npos)
            throw IngestError(a_path, line_no, "expected 'i, j', got '" + tok + "'");
        long i = parse_long(a_path, line_no, trim(tok.substr(0, comma)));
        long j = parse_long(a_path, line_no, trim(tok.substr(comma + 1)));
        if (i < 1 || i > num_nodes_total || j < 1 || j > num_nodes_total)
            throw IngestError(a_path, line_no, "node index out of range 1.." +
                                                   std::to_string(num_nodes_total));
        int gi = node_graph[i - 1], gj = node_graph[j - 1];
        if (gi != gj)
            throw IngestError(a_path, line_no, "edge joins nodes of different graphs");
        long lab = 0;
        if (have_edge_labels) {
            lab = parse_long(elab_path, elab_lines[e].first, elab_lines[e].second);
            edge_label_values.insert(lab);
        }
        graph_edges[gi].push_back({node_local[i - 1], node_local[j - 1], lab});
    }
    auto edge_slot = slot_map(edge_label_values);

    Dataset ds;
    ds.name = name;
    ds.num_tasks = num_tasks;
    ds.metric = Metric::accuracy;
    ds.graphs.resize(num_graphs);
    for (long g = 0; g < num_graphs; ++g) {
        Graph& out = ds.graphs[g];
        out.num_nodes = graph_size[g];
        out.node_features.assign(out.num_nodes,
                                 std::vector<double>(have_node_labels ? node_slot.size() : 1, 0.0));
        for (auto& raw : graph_edges[g]) {
            out.edges.emplace_back(raw.u, raw.v);
            if (have_edge_labels) {
                std::vector<double> oh(edge_slot.size(), 0.0);
                oh[edge_slot.at(raw.label)] = 1.0;
                out.edge_features.push_back(std::move(oh));
            }
        }
        canonicalize_edges(out.edges, &out.edge_features);
        if (num_classes <= 2) {
            out.labels = {(double)class_of.at(graph_label[g])};
        } else {
            out.labels.assign(num_classes, 0.0);
            out.labels[class_of.at(graph_label[g])] = 1.0;
        }
        out.validate();
    }
    // Fill node features after sizes are known (one-hot or all-ones).
    for (long i = 0; i < num_nodes_total; ++i) {
        auto& row = ds.graphs[node_graph[i]].node_features[node_local[i]];
        if (have_node_labels)
            row[node_slot.at(node_label[i])] = 1.0;
        else
            row[0] = 1.0;
    }
    return ds;
}

Dataset resolve_dataset(const std::string& name_or_path, const std::string& data_dir_flag) {
    namespace fs = std::filesystem;
    if (name_or_path.size() > 5 &&
        name_or_path.substr(name_or_path.size() - 5) == ".json") {
        if (!fs::exists(name_or_path))
            throw IngestError(name_or_path, "file not found");
        return load_json_graphs(name_or_path, fs::path(name_or_path).stem().string());
    }
    std::string root = data_dir_flag;
    if (root.empty()) {
        const char* env = std::getenv("PATCHGT_DATA_DIR");
        if (env) root = env;
    }
    if (root.empty()) root = "data";
    const fs::path dir = fs::path(root) / name_or_path;
    if (!fs::exists(dir / (name_or_path + "_A.txt")))
        throw IngestError(dir.string(),
                          "TU corpus '" + name_or_path + "' not found (searched " + dir.string() +
                              "; set --data-dir or PATCHGT_DATA_DIR)");
    return load_tu_dataset(dir.string(), name_or_path);
}

}  // namespace patchgt
