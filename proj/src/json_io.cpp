#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "json.hpp"
#include "patchgt/errors.hpp"
#include "patchgt/graph.hpp"

namespace patchgt {

using nlohmann::json;

namespace {

std::vector<std::vector<double>> parse_rows(const json& arr, const std::string& path,
                                            size_t graph_idx, const char* key) {
    std::vector<std::vector<double>> rows;
    if (!arr.is_array())
        throw IngestError(path, "graph #" + std::to_string(graph_idx) + ": " + key +
                                    " must be an array of number arrays");
    for (const auto& r : arr) {
        std::vector<double> row;
        for (const auto& v : r) {
            if (v.is_null())
                row.push_back(std::numeric_limits<double>::quiet_NaN());
            else if (v.is_number())
                row.push_back(v.get<double>());
            else
                throw IngestError(path, "graph #" + std::to_string(graph_idx) + ": " + key +
                                            " entries must be numbers");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

Dataset load_json_graphs(const std::string& path, const std::string& name) {
    std::ifstream in(path);
    if (!in) throw IngestError(path, "missing file");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw IngestError(path, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw IngestError(path, "top level must be a JSON array of graphs");

    Dataset ds;
    ds.name = name;
    ds.metric = Metric::accuracy;
    int num_tasks = -1;
    for (size_t gi = 0; gi < doc.size(); ++gi) {
        const json& jg = doc[gi];
        const std::string where = "graph #" + std::to_string(gi);
        if (!jg.is_object() || !jg.contains("num_nodes") ||
            !jg["num_nodes"].is_number_integer())
            throw IngestError(path, where + ": missing integer num_nodes");
        Graph g;
        g.num_nodes = jg["num_nodes"].get<int>();
        if (g.num_nodes < 0) throw IngestError(path, where + ": negative num_nodes");

        if (jg.contains("edges")) {
            for (const auto& je : jg["edges"]) {
                if (!je.is_array() || je.size() != 2 || !je[0].is_number_integer() ||
                    !je[1].is_number_integer())
                    throw IngestError(path, where + ": edges must be [i, j] integer pairs");
                int u = je[0].get<int>(), v = je[1].get<int>();
                if (u < 0 || v < 0 || u >= g.num_nodes || v >= g.num_nodes)
                    throw IngestError(path, where + ": edge [" + std::to_string(u) + ", " +
                                                std::to_string(v) + "] out of range for " +
                                                std::to_string(g.num_nodes) + " nodes");
                g.edges.emplace_back(u, v);
            }
        }
        if (jg.contains("edge_features")) {
            g.edge_features = parse_rows(jg["edge_features"], path, gi, "edge_features");
            if (g.edge_features.size() != g.edges.size())
                throw IngestError(path, where + ": edge_features rows != edge count");
        }
        canonicalize_edges(g.edges, &g.edge_features);

        if (jg.contains("node_features")) {
            g.node_features = parse_rows(jg["node_features"], path, gi, "node_features");
            if ((int)g.node_features.size() != g.num_nodes)
                throw IngestError(path, where + ": node_features rows != num_nodes");
        } else {
            g.node_features.assign(g.num_nodes, std::vector<double>{1.0});
        }

        if (jg.contains("labels")) {
            for (const auto& v : jg["labels"]) {
                if (v.is_null())
                    g.labels.push_back(std::numeric_limits<double>::quiet_NaN());
                else if (v.is_number())
                    g.labels.push_back(v.get<double>());
                else
                    throw IngestError(path, where + ": labels must be numbers or null");
            }
        }
        if (num_tasks < 0)
            num_tasks = (int)g.labels.size();
        else if ((int)g.labels.size() != num_tasks)
            throw IngestError(path, where + ": label count differs from earlier graphs");

        g.validate();
        ds.graphs.push_back(std::move(g));
    }
    ds.num_tasks = num_tasks < 0 ? 0 : num_tasks;
    return ds;
}

void save_json_graphs(const Dataset& ds, const std::string& path) {
    json doc = json::array();
    for (const Graph& g : ds.graphs) {
        json jg;
        jg["num_nodes"] = g.num_nodes;
        json edges = json::array();
        for (auto [u, v] : g.edges) edges.push_back({u, v});
        jg["edges"] = std::move(edges);
        jg["node_features"] = g.node_features;
        if (!g.edge_features.empty()) jg["edge_features"] = g.edge_features;
        json labels = json::array();
        for (double v : g.labels) {
            if (std::isnan(v))
                labels.push_back(nullptr);
            else
                labels.push_back(v);
        }
        jg["labels"] = std::move(labels);
        doc.push_back(std::move(jg));
    }
    std::ofstream out(path);
    if (!out) throw IngestError(path, "cannot open for writing");
    out << doc.dump(1) << "\n";
}

}  // namespace patchgt
