#include "patchgt/bottleneck.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "patchgt/errors.hpp"

namespace patchgt {

void BottleneckInstance::validate() const {
    if (tau < 1) throw ConfigError("bottleneck: tau must be at least 1");
    if (size_s < 1 || size_t_ < 1)
        throw ConfigError("bottleneck: both clusters need at least one node");
    if (cut_edges < 0) throw ConfigError("bottleneck: negative cut size");
    if (layers < 1) throw ConfigError("bottleneck: needs at least one layer");
    if (!(epsilon > 0.0)) throw ConfigError("bottleneck: epsilon must be positive");
    if (trials < 1) throw ConfigError("bottleneck: needs at least one trial");
    if (dim < 1) throw ConfigError("bottleneck: feature width must be positive");
}

double bound_value(const BottleneckInstance& inst) {
    return 2.0 * inst.cut_edges * inst.layers / (double)inst.size_t_;
}

namespace {

// Edges of one cluster over local ids [0, n). Nodes [0, m) come out one short
// of tau; the caller closes the gap with their cross edges.
std::vector<std::pair<int, int>> cluster_edges(int n, int tau, int m, const char* side) {
    const std::string where = std::string("bottleneck cluster ") + side;
    if (tau >= n)
        throw ConfigError(where + ": tau " + std::to_string(tau) +
                          " needs more than " + std::to_string(n) + " nodes");
    if ((tau * n - m) % 2 != 0)
        throw ConfigError(where + ": violated parity, tau*n - m = " +
                          std::to_string(tau * n - m) + " must be even");

    std::vector<std::pair<int, int>> edges;
    auto circulant = [&](int max_offset) {
        for (int off = 1; off <= max_offset; ++off)
            for (int i = 0; i < n; ++i)
                edges.push_back({std::min(i, (i + off) % n), std::max(i, (i + off) % n)});
    };

    if (tau % 2 == 0) {
        // Even tau (so m is even by the parity above): full circulant, then
        // drop the disjoint offset-1 edges (0,1), (2,3), ... to leave nodes
        // [0, m) one degree short.
        circulant(tau / 2);
        for (int i = 0; i + 1 < m; i += 2) {
            const auto it = std::find(edges.begin(), edges.end(), std::make_pair(i, i + 1));
            edges.erase(it);
        }
    } else {
        // Odd tau: (tau-1)-regular circulant, then a matching lifts the
        // n - m non-cut nodes to tau. Pairing each with its half-shift
        // partner keeps the new edges off the circulant offsets as long as
        // (n - m) / 2 exceeds (tau - 1) / 2.
        if (m < n && n - m < tau)
            throw ConfigError(where + ": only " + std::to_string(n - m) +
                              " nodes stay internal, too few for degree " +
                              std::to_string(tau));
        circulant((tau - 1) / 2);
        const int k = n - m;
        for (int i = 0; i < k / 2; ++i) edges.push_back({m + i, m + i + k / 2});
    }
    return edges;
}

}  // namespace

Graph build_two_cluster_regular(int tau, int n_s, int n_t, int cut_edges) {
    if (tau < 1) throw ConfigError("bottleneck: tau must be at least 1");
    if (cut_edges < 0 || cut_edges > std::min(n_s, n_t))
        throw ConfigError("bottleneck: cut size must lie in [0, min(|S|, |T|)]");

    Graph g;
    g.num_nodes = n_s + n_t;
    for (auto [a, b] : cluster_edges(n_s, tau, cut_edges, "S")) g.edges.push_back({a, b});
    for (auto [a, b] : cluster_edges(n_t, tau, cut_edges, "T"))
        g.edges.push_back({a + n_s, b + n_s});
    for (int i = 0; i < cut_edges; ++i) g.edges.push_back({i, n_s + i});
    canonicalize_edges(g.edges);
    g.node_features.assign((size_t)g.num_nodes, {1.0});
    g.validate();

    // Audit the construction instead of trusting it.
    std::vector<int> degree(g.num_nodes, 0);
    int crossing = 0;
    for (auto [a, b] : g.edges) {
        ++degree[a];
        ++degree[b];
        if ((a < n_s) != (b < n_s)) ++crossing;
    }
    for (int d : degree)
        if (d != tau)
            throw ContractError("bottleneck: degree audit found " + std::to_string(d) +
                                ", wanted " + std::to_string(tau));
    if (crossing != cut_edges)
        throw ContractError("bottleneck: cut audit found " + std::to_string(crossing) +
                            " crossing edges, wanted " + std::to_string(cut_edges));
    return g;
}

namespace {

Mat relu_of(Mat m) {
    for (double& v : m.a)
        if (v < 0.0) v = 0.0;
    return m;
}

// One L-layer pass of H' = relu(H W1^T + A H W2^T); w1t/w2t hold the
// transposed weights per layer.
Mat run_gnn(const Mat& adj, Mat h, const std::vector<Mat>& w1t,
            const std::vector<Mat>& w2t) {
    for (size_t l = 0; l < w1t.size(); ++l) {
        Mat pre = matmul(h, w1t[l]);
        const Mat agg = matmul(matmul(adj, h), w2t[l]);
        for (size_t i = 0; i < pre.a.size(); ++i) pre.a[i] += agg.a[i];
        h = relu_of(std::move(pre));
    }
    return h;
}

double t_block_l1_diff(const Mat& x, const Mat& y, int n_s) {
    double sum = 0.0;
    for (size_t i = (size_t)n_s; i < x.rows; ++i)
        for (size_t j = 0; j < x.cols; ++j) sum += std::abs(x.at(i, j) - y.at(i, j));
    return sum;
}

// Columns scaled to unit absolute sum, the L1-induced operator norm.
Mat column_normalized(Mat w) {
    for (size_t j = 0; j < w.cols; ++j) {
        double s = 0.0;
        for (size_t i = 0; i < w.rows; ++i) s += std::abs(w.at(i, j));
        if (s > 0.0)
            for (size_t i = 0; i < w.rows; ++i) w.at(i, j) /= s;
    }
    return w;
}

}  // namespace

RatioStats node_ratio(const BottleneckInstance& inst, Rng& rng) {
    inst.validate();
    const Graph g =
        build_two_cluster_regular(inst.tau, inst.size_s, inst.size_t_, inst.cut_edges);
    const Mat adj = adjacency_matrix(g);
    const size_t n = (size_t)g.num_nodes, d = (size_t)inst.dim;

    // First pass collects per-draw responses; the shared denominator is the
    // strongest internal response seen, seeded by the identity reference.
    std::vector<double> cross, internal;
    for (int trial = 0; trial < inst.trials; ++trial) {
        std::vector<Mat> w1t, w2t;
        for (int l = 0; l < inst.layers; ++l) {
            for (auto* dst : {&w1t, &w2t}) {
                Mat w(d, d);
                for (double& v : w.a) v = 2.0 * rng.uniform01() - 1.0;
                dst->push_back(transpose(column_normalized(std::move(w))));
            }
        }
        Mat x(n, d);
        for (double& v : x.a) v = rng.uniform01();
        Mat xa = x, xb = x;
        for (size_t i = 0; i < (size_t)inst.size_s; ++i)
            for (size_t j = 0; j < d; ++j) xa.at(i, j) += inst.epsilon * rng.sign();
        for (size_t i = (size_t)inst.size_s; i < n; ++i)
            for (size_t j = 0; j < d; ++j) xb.at(i, j) += inst.epsilon * rng.sign();

        const Mat base = run_gnn(adj, x, w1t, w2t);
        cross.push_back(t_block_l1_diff(run_gnn(adj, xa, w1t, w2t), base, inst.size_s));
        internal.push_back(
            t_block_l1_diff(run_gnn(adj, xb, w1t, w2t), base, inst.size_s));
    }

    double den = identity_config_response(inst);
    for (double v : internal) den = std::max(den, v);
    if (den == 0.0) throw NumericError("node_ratio: no internal response at all");

    RatioStats stats;
    double sum = 0.0;
    for (int trial = 0; trial < inst.trials; ++trial) {
        if (internal[trial] == 0.0) {
            ++stats.discarded;
            continue;
        }
        const double r = cross[trial] / den;
        stats.max_ratio = std::max(stats.max_ratio, r);
        sum += r;
        ++stats.used;
    }
    if (stats.used == 0)
        throw NumericError("node_ratio: every draw had a zero internal response");
    stats.mean_ratio = sum / stats.used;
    return stats;
}

double identity_config_response(const BottleneckInstance& inst) {
    inst.validate();
    const Graph g =
        build_two_cluster_regular(inst.tau, inst.size_s, inst.size_t_, inst.cut_edges);
    const Mat adj = adjacency_matrix(g);
    const size_t n = (size_t)g.num_nodes, d = (size_t)inst.dim;

    std::vector<Mat> eye((size_t)inst.layers, Mat::identity(d));
    Mat x(n, d, 1.0);
    Mat xb = x;
    for (size_t i = (size_t)inst.size_s; i < n; ++i)
        for (size_t j = 0; j < d; ++j) xb.at(i, j) += inst.epsilon;
    return t_block_l1_diff(run_gnn(adj, xb, eye, eye), run_gnn(adj, x, eye, eye),
                           inst.size_s);
}

double patch_ratio(const BottleneckInstance& inst, const Mat* w1, const Mat* w2) {
    inst.validate();
    const size_t d = (size_t)inst.dim;
    const double v = (double)(inst.size_s + inst.size_t_);
    Mat default_w1 = Mat::identity(d), default_w2 = Mat::identity(d);
    for (size_t i = 0; i < d; ++i) {
        default_w1.at(i, i) = inst.size_s / v;
        default_w2.at(i, i) = inst.size_t_ / v;
    }
    const Mat w1t = transpose(w1 ? *w1 : default_w1);
    const Mat w2t = transpose(w2 ? *w2 : default_w2);

    // Per-node output of the identity-weight node stage on an isolated
    // tau-regular cluster: uniform (1+tau)^L from all-ones inputs, and the
    // same factor times epsilon as the perturbation response.
    const double f = std::pow(1.0 + inst.tau, inst.layers);
    const Mat z_s(1, d, inst.size_s / v * f);
    const Mat z_t(1, d, inst.size_t_ / v * f);
    const Mat dz_s(1, d, inst.size_s / v * f * inst.epsilon);
    const Mat dz_t(1, d, inst.size_t_ / v * f * inst.epsilon);

    auto coarse_t = [&](const Mat& zt, const Mat& zs) {
        Mat pre = matmul(zt, w1t);
        const Mat from_s = matmul(zs, w2t);
        for (size_t i = 0; i < pre.a.size(); ++i) pre.a[i] += from_s.a[i];
        return relu_of(std::move(pre));
    };
    auto add = [](const Mat& a, const Mat& b) {
        Mat out = a;
        for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += b.a[i];
        return out;
    };
    auto l1_diff = [](const Mat& a, const Mat& b) {
        double sum = 0.0;
        for (size_t i = 0; i < a.a.size(); ++i) sum += std::abs(a.a[i] - b.a[i]);
        return sum;
    };

    const Mat base = coarse_t(z_t, z_s);
    const double num = l1_diff(coarse_t(z_t, add(z_s, dz_s)), base);
    const double den = l1_diff(coarse_t(add(z_t, dz_t), z_s), base);
    if (num == 0.0) return 0.0;
    return num / den;
}

void BottleneckGrid::validate() const {
    if (taus.empty() || cuts.empty() || layers.empty() || t_sizes.empty())
        throw ConfigError("bottleneck grid: every axis needs at least one value");
    if (trials < 1) throw ConfigError("bottleneck grid: needs at least one trial");
    if (!(epsilon > 0.0)) throw ConfigError("bottleneck grid: epsilon must be positive");
    if (dim < 1) throw ConfigError("bottleneck grid: feature width must be positive");
}

BottleneckGrid bottleneck_grid_from_json_text(const std::string& text,
                                              const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(origin, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw IngestError(origin, "grid must be a JSON object");

    BottleneckGrid grid;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "taus") grid.taus = val.get<std::vector<int>>();
            else if (key == "cuts") grid.cuts = val.get<std::vector<int>>();
            else if (key == "layers") grid.layers = val.get<std::vector<int>>();
            else if (key == "t_sizes") grid.t_sizes = val.get<std::vector<int>>();
            else if (key == "trials") grid.trials = val.get<int>();
            else if (key == "epsilon") grid.epsilon = val.get<double>();
            else if (key == "dim") grid.dim = val.get<int>();
            else throw ConfigError(origin + ": unknown grid key \"" + key + "\"");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(origin + ": bad grid value: " + e.what());
    }
    grid.validate();
    return grid;
}

std::vector<GridEntry> run_bottleneck_grid(const BottleneckGrid& grid, uint64_t seed,
                                           int jobs) {
    grid.validate();

    std::vector<GridEntry> entries;
    for (int tau : grid.taus)
        for (int cut : grid.cuts)
            for (int layer_count : grid.layers)
                for (int t_size : grid.t_sizes) {
                    GridEntry e;
                    e.inst.tau = tau;
                    e.inst.size_s = t_size;
                    e.inst.size_t_ = t_size;
                    e.inst.cut_edges = cut;
                    e.inst.layers = layer_count;
                    e.inst.epsilon = grid.epsilon;
                    e.inst.trials = grid.trials;
                    e.inst.dim = grid.dim;
                    e.bound = bound_value(e.inst);
                    entries.push_back(e);
                }

    const Rng master(seed);
    std::atomic<size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= entries.size()) return;
            GridEntry& e = entries[i];
            try {
                try {
                    Rng rng = master.derive(i);
                    e.node = node_ratio(e.inst, rng);
                    e.patch = patch_ratio(e.inst);
                    e.feasible = true;
                } catch (const ConfigError& err) {
                    e.feasible = false;
                    e.skip_reason = err.what();
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };

    const int workers = std::max(1, std::min<int>(jobs, (int)entries.size()));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return entries;
}

std::string bottleneck_report_json(const std::vector<GridEntry>& entries) {
    nlohmann::json j;
    j["instances"] = nlohmann::json::array();
    int violations = 0, feasible = 0;
    for (const GridEntry& e : entries) {
        nlohmann::json row = {{"tau", e.inst.tau},
                              {"size_s", e.inst.size_s},
                              {"size_t", e.inst.size_t_},
                              {"cut_edges", e.inst.cut_edges},
                              {"layers", e.inst.layers},
                              {"epsilon", e.inst.epsilon},
                              {"trials", e.inst.trials},
                              {"dim", e.inst.dim},
                              {"bound", e.bound},
                              {"feasible", e.feasible}};
        if (e.feasible) {
            ++feasible;
            const bool violated = e.node.max_ratio > e.bound + 1e-9;
            if (violated) ++violations;
            row["max_ratio"] = e.node.max_ratio;
            row["mean_ratio"] = e.node.mean_ratio;
            row["used_trials"] = e.node.used;
            row["discarded_trials"] = e.node.discarded;
            row["violated"] = violated;
            row["patch_ratio"] = e.patch;
        } else {
            row["skip_reason"] = e.skip_reason;
        }
        j["instances"].push_back(row);
    }
    j["feasible_instances"] = feasible;
    j["violations"] = violations;

    // Diagnostic only: mean ratio should not decrease as the cut widens.
    std::map<std::tuple<int, int, int>, std::vector<std::pair<int, double>>> by_group;
    for (const GridEntry& e : entries)
        if (e.feasible)
            by_group[{e.inst.tau, e.inst.layers, e.inst.size_t_}].push_back(
                {e.inst.cut_edges, e.node.mean_ratio});
    int monotone = 0;
    nlohmann::json groups = nlohmann::json::array();
    for (auto& [key, rows] : by_group) {
        std::sort(rows.begin(), rows.end());
        bool ok = true;
        nlohmann::json means = nlohmann::json::array();
        for (size_t i = 0; i < rows.size(); ++i) {
            means.push_back({{"cut_edges", rows[i].first}, {"mean_ratio", rows[i].second}});
            if (i > 0 && rows[i].second < rows[i - 1].second) ok = false;
        }
        monotone += ok;
        groups.push_back({{"tau", std::get<0>(key)},
                          {"layers", std::get<1>(key)},
                          {"size_t", std::get<2>(key)},
                          {"non_decreasing_in_cut", ok},
                          {"means", means}});
    }
    j["trend"] = {{"groups", groups},
                  {"monotone_groups", monotone},
                  {"total_groups", (int)by_group.size()}};
    j["limitation"] =
        "Random search certifies that no sampled configuration violates the "
        "bound; it says nothing about the bound's tightness.";
    return j.dump(1);
}

}  // namespace patchgt
