// Acceptance gate for the shipped guarantees. Each criterion prints exactly
// one PASS or FAIL line with its measured numbers; the tolerances live here,
// next to the checks. Run one criterion with --criterion N, or all with no
// arguments. Exit 0 only when every requested criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "patchgt/bottleneck.hpp"
#include "patchgt/errors.hpp"
#include "patchgt/gradcheck.hpp"
#include "patchgt/graph.hpp"
#include "patchgt/metrics.hpp"
#include "patchgt/model.hpp"
#include "patchgt/rng.hpp"
#include "patchgt/spectral.hpp"
#include "patchgt/synthetic.hpp"
#include "patchgt/tensor.hpp"
#include "patchgt/train.hpp"
#include "patchgt/wl.hpp"

using namespace patchgt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* fmt, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    return buf;
}

int worker_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    return (int)std::max(1u, std::min(hw, 8u));
}

Graph cycle_graph(int n) {
    Graph g;
    g.num_nodes = n;
    for (int i = 0; i < n; ++i)
        g.edges.push_back({std::min(i, (i + 1) % n), std::max(i, (i + 1) % n)});
    canonicalize_edges(g.edges);
    g.node_features.assign(n, {1.0});
    return g;
}

Graph complete_graph(int n) {
    Graph g;
    g.num_nodes = n;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) g.edges.push_back({i, j});
    g.node_features.assign(n, {1.0});
    return g;
}

Graph two_triangles() {
    Graph g;
    g.num_nodes = 6;
    g.edges = {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}};
    g.node_features.assign(6, {1.0});
    return g;
}

Graph random_graph(int n, double p, int feat_dim, int edge_dim, Rng& rng) {
    Graph g;
    g.num_nodes = n;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.uniform01() < p) {
                g.edges.push_back({i, j});
                if (edge_dim > 0) {
                    std::vector<double> f(edge_dim);
                    for (double& v : f) v = rng.uniform(-1.0, 1.0);
                    g.edge_features.push_back(f);
                }
            }
    g.node_features.resize(n);
    for (auto& row : g.node_features) {
        row.resize(feat_dim);
        for (double& v : row) v = rng.uniform(-1.0, 1.0);
    }
    return g;
}

bool is_connected(const Graph& g) {
    if (g.num_nodes == 0) return false;
    std::vector<std::vector<int>> adj(g.num_nodes);
    for (auto [a, b] : g.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<char> seen(g.num_nodes, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int reached = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++reached;
                stack.push_back(w);
            }
    }
    return reached == g.num_nodes;
}

Mat eval_logits(const Graph& g, const PatchPartition& part, const PatchGTConfig& config,
                const ModelParams& params) {
    Tape tape;
    const BoundParams bp = BoundParams::bind(tape, params);
    return tape.value(forward(tape, g, part, config, bp).logits);
}

// ---------------------------------------------------------------------------
// 1. Desk-scale corpus accuracy: 10-fold cross-validation on MUTAG with the
//    full-width model, gamma chosen on validation, mean test accuracy at
//    least 0.80 within a 45 minute budget.

Outcome criterion_corpus_accuracy() {
    const double kAccuracyFloor = 0.80;
    const double kMinuteCap = 45.0;
    const std::vector<double> kGammaGrid{0.1, 0.2, 0.4, 0.5, 0.8};

    Dataset ds;
    try {
        ds = resolve_dataset("MUTAG", "");
    } catch (const Error& e) {
        return {false, format("blocked, corpus not on disk: %s", e.what())};
    }

    const auto t0 = std::chrono::steady_clock::now();
    PatchGTConfig config;  // defaults are the full-width shape: d=64, 4/2/2 layers
    OptimizerSettings opt;
    opt.lr = 1e-3;
    opt.batch_size = 32;
    opt.epochs = 50;
    opt.folds = 10;

    double best_val = -1.0, test_at_best = 0.0, best_gamma = 0.0;
    for (double gamma : kGammaGrid) {
        config.gamma = gamma;
        const TrainRun run = cross_validate(ds, config, opt, 2020, worker_threads());
        double val = 0.0;
        for (const FoldResult& f : run.folds) val += f.best_val;
        val /= (double)run.folds.size();
        if (val > best_val) {
            best_val = val;
            test_at_best = run.mean_test;
            best_gamma = gamma;
        }
    }
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
        60.0;
    const bool pass = test_at_best >= kAccuracyFloor && minutes <= kMinuteCap;
    return {pass, format("mean test accuracy %.4f at gamma %.1f (floor %.2f), "
                         "%.1f min (cap %.0f)",
                         test_at_best, best_gamma, kAccuracyFloor, minutes, kMinuteCap)};
}

// ---------------------------------------------------------------------------
// 2. Patch-count ablation: over gamma in {0, 0.1, 0.4, 0.8, 2}, the mean
//    patch count never decreases, every connected graph is one patch at
//    gamma 0, and every graph splits into singletons at gamma 2.

Outcome criterion_gamma_ablation() {
    const std::vector<double> kGammas{0.0, 0.1, 0.4, 0.8, 2.0};

    Dataset ds;
    std::string source;
    for (const char* name : {"MUTAG", "PROTEINS"}) {
        try {
            ds = resolve_dataset(name, "");
            source = name;
            break;
        } catch (const Error&) {
        }
    }
    if (source.empty()) {
        // The asserted shape is corpus-independent; stand in with connected
        // synthetic graphs when neither corpus is on disk.
        ds.name = "synthetic-connected";
        ds.graphs = synthetic_connected_corpus(60, 6, 30, 8181);
        source = "synthetic connected corpus, MUTAG/PROTEINS not on disk";
    }
    // gamma 0 collapses to one patch only on connected graphs, so the exact
    // endpoint assertions need a connected corpus.
    std::vector<Graph> connected;
    for (const Graph& g : ds.graphs)
        if (is_connected(g)) connected.push_back(g);
    ds.graphs = std::move(connected);
    if (ds.graphs.empty()) return {false, "no connected graphs in " + source};

    double prev_mean = 0.0;
    std::string means;
    for (double gamma : kGammas) {
        const std::vector<PatchPartition> parts =
            segment_dataset(ds, gamma, "", worker_threads());
        double mean_k = 0.0;
        for (size_t i = 0; i < parts.size(); ++i) {
            mean_k += parts[i].k;
            if (gamma == 0.0 && parts[i].k != 1)
                return {false, format("gamma 0 gave %d patches on a connected graph",
                                      parts[i].k)};
            if (gamma == 2.0 && parts[i].k != ds.graphs[i].num_nodes)
                return {false, format("gamma 2 gave %d patches on %d nodes", parts[i].k,
                                      ds.graphs[i].num_nodes)};
        }
        mean_k /= (double)parts.size();
        if (mean_k < prev_mean)
            return {false, format("mean k dropped from %.3f to %.3f at gamma %.1f",
                                  prev_mean, mean_k, gamma)};
        prev_mean = mean_k;
        means += format(means.empty() ? "%.2f" : " -> %.2f", mean_k);
    }
    return {true, format("mean k %s over gammas {0, 0.1, 0.4, 0.8, 2} on %zu graphs (%s)",
                         means.c_str(), ds.graphs.size(), source.c_str())};
}

// ---------------------------------------------------------------------------
// 3. Permutation invariance: relabeling nodes never changes the patch
//    partition (as a set of node sets) and moves the logits by at most 1e-8.

Outcome criterion_permutation_invariance() {
    const double kLogitTol = 1e-8;
    const int kTrials = 50;

    Rng master(1303);
    double worst = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng = master.derive((uint64_t)trial);
        const int n = 4 + (int)rng.uniform_int(37);  // up to 40 nodes
        const int feat_dim = 1 + (int)rng.uniform_int(4);
        const int edge_dim = (trial % 2 == 0) ? 0 : 2;
        const Graph g = random_graph(n, rng.uniform(0.08, 0.5), feat_dim, edge_dim, rng);

        PatchGTConfig config;
        config.gamma = std::vector<double>{0.1, 0.4, 0.8}[rng.uniform_int(3)];
        config.hidden_dim = 16;
        config.heads = 2;
        config.L1 = 2;
        config.L2 = 1;
        config.L3 = 1;
        config.gnn_kind = (trial % 4 < 2) ? GnnKind::gcn : GnnKind::gin;
        config.readout = (trial % 2 == 0) ? ReadoutMode::max_weighted : ReadoutMode::sum;
        config.mha_scale_by_k = trial % 3 == 0;
        ModelParams params = ModelParams::init(config, feat_dim, edge_dim, rng);

        const Permutation perm = Permutation::random(n, rng);
        const Graph h = permute_graph(g, perm);
        const PatchPartition pa = segment(g, config.gamma);
        const PatchPartition pb = segment(h, config.gamma);

        // Compare as set partitions over the original node ids.
        std::set<std::set<int>> blocks_a, blocks_b;
        {
            std::vector<std::set<int>> tmp_a(pa.k), tmp_b(pb.k);
            for (int i = 0; i < n; ++i) {
                tmp_a[pa.assignment[i]].insert(perm.map[i]);
                tmp_b[pb.assignment[i]].insert(i);
            }
            blocks_a.insert(tmp_a.begin(), tmp_a.end());
            blocks_b.insert(tmp_b.begin(), tmp_b.end());
        }
        if (blocks_a != blocks_b)
            return {false, format("trial %d: partitions differ after relabeling "
                                  "(%d nodes, gamma %.1f)",
                                  trial, n, config.gamma)};

        const double diff = max_abs_diff(eval_logits(g, pa, config, params),
                                         eval_logits(h, pb, config, params));
        worst = std::max(worst, diff);
    }
    return {worst <= kLogitTol,
            format("%d relabeled triples, partitions equal, max logit gap %.2e "
                   "(tolerance %.0e)",
                   kTrials, worst, kLogitTol)};
}

// ---------------------------------------------------------------------------
// 4. Expressiveness: 1-WL cannot tell a 6-cycle from two triangles, but the
//    patch pipeline (gin layers, sum readout, attention scaled by patch
//    count, gamma 0.1) separates them for at least 99 of 100 random draws.

Outcome criterion_expressiveness() {
    const double kGap = 1e-6;
    const int kTrials = 100;
    const int kNeeded = 99;

    const Graph c6 = cycle_graph(6);
    const Graph tt = two_triangles();
    if (wl_distinguishable(c6, tt))
        return {false, "color refinement separated the pair; the oracle disagrees"};

    PatchGTConfig config;
    config.gamma = 0.1;
    config.gnn_kind = GnnKind::gin;
    config.readout = ReadoutMode::sum;
    config.mha_scale_by_k = true;
    config.hidden_dim = 16;
    config.heads = 2;
    const PatchPartition pa = segment(c6, config.gamma);
    const PatchPartition pb = segment(tt, config.gamma);

    Rng master(4242);
    int separated = 0;
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng = master.derive((uint64_t)trial);
        ModelParams params = ModelParams::init(config, 1, 0, rng);
        // Every entry drawn uniform in [-1, 1], biases included; the query
        // token starts at zero so only the graph side can differ.
        auto named = params.flatten();
        for (auto& [name, m] : named)
            for (double& v : m.a) v = rng.uniform(-1.0, 1.0);
        params.assign(named);
        params.q0 = Mat(1, (size_t)config.hidden_dim);

        const double gap = max_abs_diff(eval_logits(c6, pa, config, params),
                                        eval_logits(tt, pb, config, params));
        if (gap > kGap) ++separated;
    }
    return {separated >= kNeeded,
            format("1-WL blind to the pair; %d/%d draws kept a logit gap above %.0e "
                   "(needed %d)",
                   separated, kTrials, kGap, kNeeded)};
}

// ---------------------------------------------------------------------------
// 5. Bottleneck ratios: across the default two-cluster grid no sampled
//    response ratio exceeds 2mL/|T| + 1e-9, and the compensating patch
//    construction holds its ratio within 1e-6 of one. Five minute budget.

Outcome criterion_bottleneck_bound() {
    const double kSlack = 1e-9;
    const double kPatchTol = 1e-6;
    const int kMinInstances = 18;
    const double kSecondCap = 300.0;

    const auto t0 = std::chrono::steady_clock::now();
    const BottleneckGrid grid;  // defaults: 54 instances, 200 trials each
    const std::vector<GridEntry> entries = run_bottleneck_grid(grid, 77, worker_threads());
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    int feasible = 0, violations = 0;
    double worst_ratio_share = 0.0, worst_patch = 0.0;
    for (const GridEntry& e : entries) {
        if (!e.feasible) continue;
        ++feasible;
        if (e.node.max_ratio > e.bound + kSlack) ++violations;
        worst_ratio_share = std::max(worst_ratio_share, e.node.max_ratio / e.bound);
        worst_patch = std::max(worst_patch, std::fabs(e.patch - 1.0));
    }
    const bool pass = feasible >= kMinInstances && violations == 0 &&
                      worst_patch <= kPatchTol && seconds <= kSecondCap;
    return {pass, format("%d feasible instances x %d trials, %d violations of "
                         "2mL/|T|+1e-9 (max ratio %.1f%% of bound), worst |patch "
                         "ratio - 1| %.1e (tolerance %.0e), %.0f s (cap %.0f)",
                         feasible, grid.trials, violations, 100.0 * worst_ratio_share,
                         worst_patch, kPatchTol, seconds, kSecondCap)};
}

// ---------------------------------------------------------------------------
// 6. Numeric foundations: eigendecomposition reconstructs its input and
//    matches closed-form spectra to 1e-8; every tape op and the assembled
//    model pass central-difference checks below 1e-4; the rank-based ROC-AUC
//    equals the brute-force pairwise count, bit for bit, on 100 instances.

double auc_pairwise(const std::vector<double>& scores, const std::vector<double>& labels) {
    double favorable = 0.0;
    long long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1.0) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0.0) continue;
            ++pairs;
            if (scores[i] > scores[j]) favorable += 1.0;
            else if (scores[i] == scores[j]) favorable += 0.5;
        }
    }
    return favorable / (double)pairs;
}

double model_gradcheck(const PatchGTConfig& config, int edge_dim, uint64_t seed) {
    const Graph base = synthetic_connected_corpus(1, 8, 10, seed).at(0);
    Graph g = base;
    if (edge_dim > 0) {
        Rng er(seed + 1);
        g.edge_features.resize(g.edges.size());
        for (auto& row : g.edge_features) {
            row.resize(edge_dim);
            for (double& v : row) v = er.uniform(-1.0, 1.0);
        }
    }
    Rng rng(seed + 2);
    ModelParams params = ModelParams::init(config, g.feat_dim(), g.edge_dim(), rng);
    const PatchPartition part = segment(g, config.gamma);
    Mat targets(1, 1);
    targets.at(0, 0) = 1.0;

    const auto named = params.flatten();
    std::vector<Mat> values;
    for (const auto& [name, m] : named) values.push_back(m);

    Tape tape;
    const BoundParams bp = BoundParams::bind(tape, params);
    const Tensor loss = tape.bce_masked(forward(tape, g, part, config, bp).logits, targets);
    tape.backward(loss);
    std::vector<Mat> analytic;
    for (Tensor t : bp.flat) analytic.push_back(tape.grad(t));

    ModelParams probe = params;
    auto f = [&](const std::vector<Mat>& vals) {
        auto renamed = named;
        for (size_t i = 0; i < renamed.size(); ++i) renamed[i].second = vals[i];
        probe.assign(renamed);
        Tape t2;
        const BoundParams b2 = BoundParams::bind(t2, probe);
        const Tensor l2 =
            t2.bce_masked(forward(t2, g, part, config, b2).logits, targets);
        return t2.value(l2).at(0, 0);
    };
    return gradcheck(f, values, analytic).max_rel_err;
}

Outcome criterion_numerics() {
    const double kEigTol = 1e-8;
    const double kFdTol = 1e-4;

    // Reconstruction and orthonormality on random graphs.
    double worst_recon = 0.0;
    {
        Rng rng(606);
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 3 + (int)rng.uniform_int(22);
            const Graph g = random_graph(n, rng.uniform(0.1, 0.6), 1, 0, rng);
            const Mat lap = normalized_laplacian(g);
            const SpectralDecomposition dec = eigendecompose(lap);
            Mat lambda((size_t)n, (size_t)n);
            for (int i = 0; i < n; ++i) lambda.at(i, i) = dec.eigenvalues[i];
            const Mat recon = matmul(matmul(dec.eigenvectors, lambda),
                                     transpose(dec.eigenvectors));
            worst_recon = std::max(worst_recon, max_abs_diff(recon, lap));
            const Mat gram = matmul(transpose(dec.eigenvectors), dec.eigenvectors);
            worst_recon = std::max(worst_recon,
                                   max_abs_diff(gram, Mat::identity((size_t)n)));
        }
    }
    if (worst_recon > kEigTol)
        return {false, format("eigendecomposition reconstruction off by %.2e", worst_recon)};

    // Closed-form spectra: the complete graph has one zero and n-1 copies of
    // n/(n-1); the 6-cycle has 1 - cos(pi j / 3).
    double worst_spectrum = 0.0;
    for (int n : {5, 8}) {
        const auto vals = eigendecompose(normalized_laplacian(complete_graph(n))).eigenvalues;
        worst_spectrum = std::max(worst_spectrum, std::fabs(vals[0]));
        for (int i = 1; i < n; ++i)
            worst_spectrum =
                std::max(worst_spectrum, std::fabs(vals[i] - (double)n / (n - 1.0)));
    }
    {
        auto vals = eigendecompose(normalized_laplacian(cycle_graph(6))).eigenvalues;
        std::vector<double> expect{0.0, 0.5, 0.5, 1.5, 1.5, 2.0};
        for (int i = 0; i < 6; ++i)
            worst_spectrum = std::max(worst_spectrum, std::fabs(vals[i] - expect[i]));
    }
    if (worst_spectrum > kEigTol)
        return {false, format("analytic spectra off by %.2e", worst_spectrum)};

    // Central differences over every tape op, inputs placed away from the
    // relu kink and max-pool ties.
    double worst_fd = 0.0;
    {
        Rng rng(909);
        auto fill = [&](size_t r, size_t c, double lo, double hi) {
            Mat m(r, c);
            for (double& v : m.a) {
                v = rng.uniform(lo, hi);
                if (std::fabs(v) < 0.15) v = v < 0 ? v - 0.15 : v + 0.15;
            }
            return m;
        };
        auto check_op = [&](const std::vector<Mat>& inputs,
                            const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& build) {
            Tape tape;
            std::vector<Tensor> leaves;
            for (const Mat& m : inputs) leaves.push_back(tape.leaf(m));
            const Tensor out = build(tape, leaves);
            tape.backward(tape.mean(out));
            std::vector<Mat> analytic;
            for (Tensor t : leaves) analytic.push_back(tape.grad(t));
            auto f = [&](const std::vector<Mat>& vals) {
                Tape t2;
                std::vector<Tensor> l2;
                for (const Mat& m : vals) l2.push_back(t2.leaf(m));
                const Tensor o2 = build(t2, l2);
                return t2.value(t2.mean(o2)).at(0, 0);
            };
            worst_fd = std::max(worst_fd, gradcheck(f, inputs, analytic).max_rel_err);
        };

        const Mat a23 = fill(2, 3, -2, 2), b23 = fill(2, 3, -2, 2);
        const Mat b32 = fill(3, 2, -2, 2), bias3 = fill(1, 3, -1, 1);
        check_op({a23, b32}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.matmul(l[0], l[1]);
        });
        check_op({a23, b23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.add(l[0], l[1]);
        });
        check_op({a23, bias3}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.add(l[0], l[1]);  // row-broadcast form
        });
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.scalar_mul(l[0], 1.7);
        });
        check_op({a23, fill(1, 1, 0.3, 1.5)}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.scale_by(l[0], l[1]);
        });
        {
            Mat mask(2, 3);
            for (size_t i = 0; i < mask.a.size(); ++i) mask.a[i] = i % 2 ? 0.0 : 2.0;
            check_op({a23}, [mask](Tape& t, const std::vector<Tensor>& l) {
                return t.mask_mul(l[0], mask);
            });
        }
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) { return t.relu(l[0]); });
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) { return t.sigmoid(l[0]); });
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.softmax_last(l[0]);
        });
        check_op({a23, fill(4, 3, -2, 2), fill(1, 4, -1, 1)},
                 [](Tape& t, const std::vector<Tensor>& l) {
                     return t.linear(l[0], l[1], l[2]);
                 });
        {
            // Distinct column entries keep the argmax stable under the probe step.
            Mat spread(3, 2);
            double v = -1.0;
            for (double& x : spread.a) x = (v += 0.7);
            check_op({spread}, [](Tape& t, const std::vector<Tensor>& l) {
                return t.row_max_pool(l[0]);
            });
        }
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.row_sum_pool(l[0]);
        });
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) { return t.mean(l[0]); });
        check_op({a23, b23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.concat_rows({l[0], l[1]});
        });
        check_op({a23, b23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.concat_cols({l[0], l[1]});
        });
        check_op({a23}, [](Tape& t, const std::vector<Tensor>& l) {
            return t.transpose(l[0]);
        });
        {
            Mat targets(1, 3);
            targets.at(0, 0) = 1.0;
            targets.at(0, 1) = 0.0;
            targets.at(0, 2) = std::nan("");
            check_op({fill(1, 3, -2, 2)}, [targets](Tape& t, const std::vector<Tensor>& l) {
                return t.bce_masked(l[0], targets);
            });
        }
    }
    if (worst_fd > kFdTol)
        return {false, format("a tape op failed finite differences at %.2e", worst_fd)};

    // The assembled model, across both layer kinds, both readouts and the
    // edge-feature path.
    {
        PatchGTConfig c;
        c.gamma = 0.4;
        c.hidden_dim = 8;
        c.heads = 2;
        c.L1 = 2;
        c.L2 = 1;
        c.L3 = 2;
        worst_fd = std::max(worst_fd, model_gradcheck(c, 2, 21));
        c.gnn_kind = GnnKind::gin;
        c.readout = ReadoutMode::sum;
        c.mha_scale_by_k = true;
        worst_fd = std::max(worst_fd, model_gradcheck(c, 0, 22));
        c.gnn_kind = GnnKind::gcn;
        worst_fd = std::max(worst_fd, model_gradcheck(c, 0, 23));
        c.gnn_kind = GnnKind::gin;
        c.readout = ReadoutMode::max_weighted;
        worst_fd = std::max(worst_fd, model_gradcheck(c, 2, 24));
    }
    if (worst_fd > kFdTol)
        return {false, format("assembled model failed finite differences at %.2e", worst_fd)};

    // Rank-based ROC-AUC against the pairwise count, tie-heavy scores.
    Rng rng(111);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 4 + (int)rng.uniform_int(30);
        std::vector<double> scores(n), labels(n);
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            scores[i] = (double)rng.uniform_int(8) / 8.0;
            labels[i] = (double)rng.uniform_int(2);
            has0 |= labels[i] == 0.0;
            has1 |= labels[i] == 1.0;
        }
        if (!has0) labels[0] = 0.0;
        if (!has1) labels[n - 1] = 1.0;
        if (roc_auc(scores, labels) != auc_pairwise(scores, labels))
            return {false, format("ROC-AUC diverged from the pairwise count on trial %d",
                                  trial)};
    }

    return {true, format("reconstruction %.1e and spectra %.1e (tolerance 1e-8), "
                         "finite differences %.1e over 17 ops and 4 model shapes "
                         "(tolerance 1e-4), ROC-AUC exact on 100 instances",
                         worst_recon, worst_spectrum, worst_fd)};
}

// ---------------------------------------------------------------------------
// 7. Replay determinism: re-running the manifest of a finished CLI run
//    rebuilds its outputs byte for byte, checked on the shipped binary.

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return status == -1 ? -1 : WEXITSTATUS(status);
}

Outcome criterion_replay() {
    const fs::path dir = fs::temp_directory_path() / "patchgt_acceptance_replay";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string bin = PATCHGT_CLI_BIN;
    const std::string quiet = " > " + (dir / "stdout.txt").string() + " 2>&1";

    const std::string corpus = (dir / "corpus.json").string();
    save_json_graphs(synthetic_separable(12, 31), corpus);
    {
        std::ofstream cfg(dir / "cfg.json");
        cfg << "{\"gamma\": 0.4, \"hidden_dim\": 8, \"heads\": 2, \"L1\": 1, "
               "\"L2\": 1, \"L3\": 1, \"lr\": 0.02, \"batch_size\": 4, "
               "\"epochs\": 2, \"folds\": 3}";
        std::ofstream grid(dir / "grid.json");
        grid << "{\"taus\": [2, 3], \"cuts\": [2], \"layers\": [2], "
                "\"t_sizes\": [6], \"trials\": 60, \"epsilon\": 0.001, \"dim\": 3}";
    }

    // Each row: the command to run, its manifest, and the outputs that must
    // come back identical when the manifest is replayed.
    struct Case {
        std::string name, command, manifest;
        std::vector<std::string> outputs;
    };
    const std::string run_dir = (dir / "run").string();
    const std::vector<Case> cases = {
        {"segment",
         "segment --data " + corpus + " --gamma 0.4 --out " + (dir / "seg.json").string(),
         (dir / "seg.json.manifest.json").string(),
         {(dir / "seg.json").string()}},
        {"bottleneck",
         "bottleneck --grid " + (dir / "grid.json").string() + " --seed 9 --out " +
             (dir / "bn.json").string(),
         (dir / "bn.json.manifest.json").string(),
         {(dir / "bn.json").string()}},
        {"train",
         "train --dataset " + corpus + " --config " + (dir / "cfg.json").string() +
             " --seed 3 --out " + run_dir,
         run_dir + "/manifest.json",
         {run_dir + "/run.json", run_dir + "/fold0.ckpt", run_dir + "/fold1.ckpt",
          run_dir + "/fold2.ckpt"}},
        {"gradcheck",
         "gradcheck --seed 5 --out " + (dir / "gc.json").string(),
         (dir / "gc.json.manifest.json").string(),
         {(dir / "gc.json").string()}},
    };

    for (const Case& c : cases) {
        if (run_shell(bin + " " + c.command + quiet) != 0)
            return {false, c.name + " run failed: " + slurp(dir / "stdout.txt")};
        std::vector<std::string> before;
        for (const std::string& out : c.outputs) {
            before.push_back(slurp(out));
            fs::remove(out);
        }
        if (run_shell(bin + " replay " + c.manifest + quiet) != 0)
            return {false, c.name + " replay failed: " + slurp(dir / "stdout.txt")};
        for (size_t i = 0; i < c.outputs.size(); ++i)
            if (slurp(c.outputs[i]) != before[i])
                return {false, c.name + " replay changed " + c.outputs[i]};
    }
    return {true, format("%zu subcommands (segment, bottleneck, train, gradcheck) "
                         "re-ran bit-identically from their manifests",
                         cases.size())};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "desk-scale corpus accuracy", criterion_corpus_accuracy},
    {2, "patch-count gamma ablation", criterion_gamma_ablation},
    {3, "permutation invariance", criterion_permutation_invariance},
    {4, "expressiveness beyond color refinement", criterion_expressiveness},
    {5, "bottleneck ratio bound", criterion_bottleneck_bound},
    {6, "numeric foundations", criterion_numerics},
    {7, "manifest replay determinism", criterion_replay},
};

}  // namespace

int main(int argc, char** argv) {
    int which = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            which = std::atoi(argv[++i]);
            if (which < 1 || which > 7) {
                std::fprintf(stderr, "criterion must be 1..7\n");
                return 2;
            }
        } else {
            std::fprintf(stderr, "usage: patchgt_acceptance [--criterion N]\n");
            return 2;
        }
    }

    bool all_pass = true;
    for (const Criterion& c : kCriteria) {
        if (which != 0 && c.id != which) continue;
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("unexpected exception: ") + e.what()};
        }
        std::printf("criterion %d %s %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name,
                    o.detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
