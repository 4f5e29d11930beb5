#include "patchgt/cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
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

namespace patchgt {
namespace {

namespace fs = std::filesystem;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError(path, "missing file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw IngestError(path, "cannot open for writing");
    out << text;
}

// Shortest exact decimal form; replaying the token parses back to the same
// bits, which the replay guarantee depends on.
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// The manifest is the resolved token list of the run, defaults included.
// `patchgt replay <manifest>` feeds it straight back through dispatch, so
// re-runs see exactly the settings this run saw.
void write_manifest(const std::string& path, const std::vector<std::string>& command) {
    nlohmann::json j;
    j["tool"] = "patchgt";
    j["command"] = command;
    write_text_file(path, j.dump(1) + "\n");
}

std::string manifest_or(const std::string& chosen, const std::string& fallback) {
    return chosen.empty() ? fallback : chosen;
}

std::string metric_name(Metric m) {
    return m == Metric::roc_auc ? "roc_auc" : "accuracy";
}

void require_matching_tasks(const Dataset& ds, const PatchGTConfig& config) {
    if (config.num_tasks != ds.num_tasks)
        throw ConfigError("config expects " + std::to_string(config.num_tasks) +
                          " tasks but dataset \"" + ds.name + "\" carries " +
                          std::to_string(ds.num_tasks));
}

ModelParams params_from_checkpoint(const PatchGTConfig& config, const Dataset& ds,
                                   const std::string& path) {
    Rng scratch(0);
    ModelParams params = ModelParams::init(config, ds.graphs.at(0).feat_dim(),
                                           ds.graphs.at(0).edge_dim(), scratch);
    params.assign(load_checkpoint(path));
    return params;
}

struct SegmentCmd {
    std::string data, data_dir, cache, out, manifest;
    double gamma = 0.1;
    int jobs = 1;
};

void run_segment(const SegmentCmd& c) {
    const Dataset ds = resolve_dataset(c.data, c.data_dir);
    if (ds.graphs.empty()) throw ContractError("segment: dataset has no graphs");
    const std::vector<PatchPartition> parts =
        segment_dataset(ds, c.gamma, c.cache, c.jobs);

    nlohmann::json j;
    j["dataset"] = ds.name;
    j["gamma"] = c.gamma;
    j["graphs"] = nlohmann::json::array();
    double k_sum = 0.0;
    for (size_t i = 0; i < parts.size(); ++i) {
        k_sum += parts[i].k;
        j["graphs"].push_back({{"index", (int)i},
                               {"digest", graph_digest(ds.graphs[i])},
                               {"k", parts[i].k},
                               {"assignment", parts[i].assignment},
                               {"patch_sizes", parts[i].patch_sizes},
                               {"degenerate_fallback", parts[i].degenerate_fallback}});
    }
    j["mean_k"] = k_sum / (double)parts.size();
    write_text_file(c.out, j.dump(1) + "\n");
    std::printf("segmented %zu graphs at gamma %g, mean k %.3f -> %s\n", parts.size(),
                c.gamma, k_sum / (double)parts.size(), c.out.c_str());
}

struct WlCompareCmd {
    std::string a, b, manifest;
};

void run_wl_compare(const WlCompareCmd& c) {
    const Dataset da = load_json_graphs(c.a);
    const Dataset db = load_json_graphs(c.b);
    if (da.graphs.empty()) throw ContractError(c.a + ": no graphs");
    if (db.graphs.empty()) throw ContractError(c.b + ": no graphs");

    const bool distinguishable = wl_distinguishable(da.graphs[0], db.graphs[0]);
    auto histogram_json = [](const Graph& g) {
        nlohmann::json h = nlohmann::json::object();
        for (const auto& [color, count] : wl_refine(g).histogram)
            h[std::to_string(color)] = count;
        return h.dump();
    };
    std::printf("distinguishable: %s\n", distinguishable ? "true" : "false");
    std::printf("histogram_a: %s\n", histogram_json(da.graphs[0]).c_str());
    std::printf("histogram_b: %s\n", histogram_json(db.graphs[0]).c_str());
}

struct TrainCmd {
    std::string dataset, data_dir, config, out, manifest;
    double gamma = 0.0;
    bool gamma_given = false;
    std::uint64_t seed = 0;
    int jobs = 1;
};

void run_train(const TrainCmd& c) {
    const Dataset ds = resolve_dataset(c.dataset, c.data_dir);
    const std::string cfg_text = read_text_file(c.config);
    PatchGTConfig config = config_from_json_text(cfg_text, c.config);
    const OptimizerSettings opt = optimizer_from_json_text(cfg_text, c.config);
    if (c.gamma_given) {
        config.gamma = c.gamma;
        config.validate();
    }
    require_matching_tasks(ds, config);

    const TrainRun run = cross_validate(ds, config, opt, c.seed, c.jobs, c.out);
    write_text_file((fs::path(c.out) / "run.json").string(), train_run_json(run) + "\n");
    std::printf("%s: mean %s %.4f +- %.4f over %d folds -> %s/run.json\n",
                ds.name.c_str(), run.metric_name.c_str(), run.mean_test,
                run.stddev_test, opt.folds, c.out.c_str());
}

struct EvalCmd {
    std::string dataset, data_dir, config, checkpoint, out, manifest;
    int jobs = 1;
};

void run_eval(const EvalCmd& c) {
    const Dataset ds = resolve_dataset(c.dataset, c.data_dir);
    if (ds.graphs.empty()) throw ContractError("eval: dataset has no graphs");
    const PatchGTConfig config =
        config_from_json_text(read_text_file(c.config), c.config);
    require_matching_tasks(ds, config);
    const ModelParams params = params_from_checkpoint(config, ds, c.checkpoint);

    const std::vector<PatchPartition> parts = segment_dataset(ds, config.gamma, "", c.jobs);
    std::vector<int> idx(ds.graphs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = (int)i;
    const double value = evaluate_metric(ds, idx, config, params, parts);

    nlohmann::json j = {{"dataset", ds.name},
                        {"metric", metric_name(ds.metric)},
                        {"value", value},
                        {"graphs", (int)ds.graphs.size()},
                        {"checkpoint", c.checkpoint}};
    if (!c.out.empty()) write_text_file(c.out, j.dump(1) + "\n");
    std::printf("%s %s %.6f on %zu graphs\n", ds.name.c_str(),
                metric_name(ds.metric).c_str(), value, ds.graphs.size());
}

struct BottleneckCmd {
    std::string grid, out, manifest;
    std::uint64_t seed = 0;
    int jobs = 1;
};

void run_bottleneck(const BottleneckCmd& c) {
    const BottleneckGrid grid =
        c.grid.empty() ? BottleneckGrid{}
                       : bottleneck_grid_from_json_text(read_text_file(c.grid), c.grid);
    const std::vector<GridEntry> entries = run_bottleneck_grid(grid, c.seed, c.jobs);
    write_text_file(c.out, bottleneck_report_json(entries) + "\n");

    int feasible = 0, violations = 0;
    for (const GridEntry& e : entries) {
        if (!e.feasible) continue;
        ++feasible;
        if (e.node.max_ratio > e.bound + 1e-9) ++violations;
    }
    std::printf("bottleneck grid: %d feasible of %zu, %d bound violations -> %s\n",
                feasible, entries.size(), violations, c.out.c_str());
}

struct AttentionCmd {
    std::string data, data_dir, config, checkpoint, out, manifest;
    std::uint64_t seed = 0;
    int index = 0;
};

void run_attention_export(const AttentionCmd& c) {
    const Dataset ds = resolve_dataset(c.data, c.data_dir);
    if (c.index < 0 || c.index >= (int)ds.graphs.size())
        throw ContractError("attention-export: graph index " + std::to_string(c.index) +
                            " outside dataset of " + std::to_string(ds.graphs.size()));
    const Graph& g = ds.graphs[c.index];
    const PatchGTConfig config =
        config_from_json_text(read_text_file(c.config), c.config);

    ModelParams params = [&] {
        if (!c.checkpoint.empty()) return params_from_checkpoint(config, ds, c.checkpoint);
        Rng rng(c.seed);
        return ModelParams::init(config, g.feat_dim(), g.edge_dim(), rng);
    }();

    const PatchPartition part = segment(g, config.gamma);
    Tape tape;
    const BoundParams bp = BoundParams::bind(tape, params);
    const ForwardResult fr = forward(tape, g, part, config, bp);

    write_text_file(c.out + ".json", attention_json(g, part, fr.attention));
    write_text_file(c.out + ".dot", attention_dot(g, part, fr.attention));
    std::printf("graph %d: %d patches, %zu pooling layers -> %s.json, %s.dot\n", c.index,
                part.k, fr.attention.size(), c.out.c_str(), c.out.c_str());
}

struct GradcheckCmd {
    std::string out, manifest;
    std::uint64_t seed = 0;
};

void run_gradcheck(const GradcheckCmd& c) {
    // A small end-to-end instance: random connected graph, full model,
    // masked loss; finite differences against the tape's gradients.
    const Graph g = synthetic_connected_corpus(1, 8, 12, c.seed).at(0);
    PatchGTConfig config;
    config.gamma = 0.4;
    config.hidden_dim = 8;
    config.heads = 2;
    config.L1 = 2;
    config.L2 = 1;
    config.L3 = 1;
    Rng rng(c.seed);
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
        const Tensor l2 = t2.bce_masked(forward(t2, g, part, config, b2).logits, targets);
        return t2.value(l2).at(0, 0);
    };
    const GradCheckReport report = gradcheck(f, values, analytic);

    nlohmann::json j = {{"max_rel_err", report.max_rel_err},
                        {"entries", report.entries},
                        {"tolerance", 1e-4},
                        {"pass", report.ok()},
                        {"worst", report.worst}};
    if (!c.out.empty()) write_text_file(c.out, j.dump(1) + "\n");
    std::printf("gradcheck: %zu entries, max rel err %.3g (tolerance 1e-4)\n",
                report.entries, report.max_rel_err);
    if (!report.ok())
        throw NumericError("gradient check failed: " + report.worst);
}

int dispatch(const std::vector<std::string>& args, int depth) {
    if (depth > 4) throw IngestError("replay", "manifest chain too deep");

    if (!args.empty() && args[0] == "replay") {
        if (args.size() != 2) {
            std::fprintf(stderr, "usage: patchgt replay <manifest.json>\n");
            return 2;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text_file(args[1]));
        } catch (const nlohmann::json::exception& e) {
            throw IngestError(args[1], std::string("invalid JSON: ") + e.what());
        }
        if (!j.contains("command") || !j["command"].is_array())
            throw IngestError(args[1], "manifest lacks a command array");
        std::vector<std::string> cmd;
        for (const auto& t : j["command"]) {
            if (!t.is_string()) throw IngestError(args[1], "command tokens must be strings");
            cmd.push_back(t.get<std::string>());
        }
        return dispatch(cmd, depth + 1);
    }

    CLI::App app{"PatchGT graph classification toolkit"};
    app.require_subcommand(1);

    SegmentCmd sc;
    auto* seg = app.add_subcommand("segment", "Spectral patch segmentation of a corpus");
    seg->add_option("--data", sc.data, "dataset name or graphs .json file")->required();
    seg->add_option("--gamma", sc.gamma, "eigenvalue threshold in [0, 2]");
    seg->add_option("--out", sc.out, "output JSON path")->required();
    seg->add_option("--cache", sc.cache, "segmentation cache file");
    seg->add_option("--data-dir", sc.data_dir, "corpus root (else PATCHGT_DATA_DIR)");
    seg->add_option("--jobs", sc.jobs, "worker thread cap");
    seg->add_option("--manifest", sc.manifest, "replay manifest path");
    seg->callback([&] {
        sc.manifest = manifest_or(sc.manifest, sc.out + ".manifest.json");
        std::vector<std::string> cmd{"segment", "--data", sc.data,
                                     "--gamma", fmt(sc.gamma), "--out", sc.out,
                                     "--jobs", std::to_string(sc.jobs),
                                     "--manifest", sc.manifest};
        if (!sc.cache.empty()) { cmd.push_back("--cache"); cmd.push_back(sc.cache); }
        if (!sc.data_dir.empty()) { cmd.push_back("--data-dir"); cmd.push_back(sc.data_dir); }
        write_manifest(sc.manifest, cmd);
        run_segment(sc);
    });

    WlCompareCmd wc;
    auto* wl = app.add_subcommand("wl-compare",
                                  "1-WL distinguishability of two graphs");
    wl->add_option("--a", wc.a, "first graph .json file")->required();
    wl->add_option("--b", wc.b, "second graph .json file")->required();
    wl->add_option("--manifest", wc.manifest, "replay manifest path");
    wl->callback([&] {
        wc.manifest = manifest_or(wc.manifest, "patchgt-manifest.json");
        write_manifest(wc.manifest, {"wl-compare", "--a", wc.a, "--b", wc.b,
                                     "--manifest", wc.manifest});
        run_wl_compare(wc);
    });

    TrainCmd tc;
    auto* tr = app.add_subcommand("train", "Stratified cross-validation training");
    tr->add_option("--dataset", tc.dataset, "dataset name or graphs .json file")->required();
    auto* tr_gamma = tr->add_option("--gamma", tc.gamma, "override the config's gamma");
    tr->add_option("--config", tc.config, "model and optimizer JSON")->required();
    tr->add_option("--seed", tc.seed, "64-bit master seed");
    tr->add_option("--out", tc.out, "output directory")->required();
    tr->add_option("--data-dir", tc.data_dir, "corpus root (else PATCHGT_DATA_DIR)");
    tr->add_option("--jobs", tc.jobs, "worker thread cap");
    tr->add_option("--manifest", tc.manifest, "replay manifest path");
    tr->callback([&] {
        tc.gamma_given = tr_gamma->count() > 0;
        tc.manifest = manifest_or(tc.manifest,
                                  (fs::path(tc.out) / "manifest.json").string());
        std::vector<std::string> cmd{"train", "--dataset", tc.dataset,
                                     "--config", tc.config,
                                     "--seed", std::to_string(tc.seed),
                                     "--out", tc.out,
                                     "--jobs", std::to_string(tc.jobs),
                                     "--manifest", tc.manifest};
        if (tc.gamma_given) { cmd.push_back("--gamma"); cmd.push_back(fmt(tc.gamma)); }
        if (!tc.data_dir.empty()) { cmd.push_back("--data-dir"); cmd.push_back(tc.data_dir); }
        write_manifest(tc.manifest, cmd);
        run_train(tc);
    });

    EvalCmd ec;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    ev->add_option("--dataset", ec.dataset, "dataset name or graphs .json file")->required();
    ev->add_option("--config", ec.config, "model JSON used at training time")->required();
    ev->add_option("--checkpoint", ec.checkpoint, "parameter checkpoint file")->required();
    ev->add_option("--out", ec.out, "optional metrics JSON path");
    ev->add_option("--data-dir", ec.data_dir, "corpus root (else PATCHGT_DATA_DIR)");
    ev->add_option("--jobs", ec.jobs, "worker thread cap");
    ev->add_option("--manifest", ec.manifest, "replay manifest path");
    ev->callback([&] {
        ec.manifest = manifest_or(
            ec.manifest, ec.out.empty() ? "patchgt-manifest.json" : ec.out + ".manifest.json");
        std::vector<std::string> cmd{"eval", "--dataset", ec.dataset,
                                     "--config", ec.config,
                                     "--checkpoint", ec.checkpoint,
                                     "--jobs", std::to_string(ec.jobs),
                                     "--manifest", ec.manifest};
        if (!ec.out.empty()) { cmd.push_back("--out"); cmd.push_back(ec.out); }
        if (!ec.data_dir.empty()) { cmd.push_back("--data-dir"); cmd.push_back(ec.data_dir); }
        write_manifest(ec.manifest, cmd);
        run_eval(ec);
    });

    BottleneckCmd bc;
    auto* bn = app.add_subcommand("bottleneck",
                                  "Perturbation-response ratio grid");
    bn->add_option("--grid", bc.grid, "grid JSON (omit for the default grid)");
    bn->add_option("--out", bc.out, "report JSON path")->required();
    bn->add_option("--seed", bc.seed, "64-bit master seed");
    bn->add_option("--jobs", bc.jobs, "worker thread cap");
    bn->add_option("--manifest", bc.manifest, "replay manifest path");
    bn->callback([&] {
        bc.manifest = manifest_or(bc.manifest, bc.out + ".manifest.json");
        std::vector<std::string> cmd{"bottleneck", "--out", bc.out,
                                     "--seed", std::to_string(bc.seed),
                                     "--jobs", std::to_string(bc.jobs),
                                     "--manifest", bc.manifest};
        if (!bc.grid.empty()) { cmd.push_back("--grid"); cmd.push_back(bc.grid); }
        write_manifest(bc.manifest, cmd);
        run_bottleneck(bc);
    });

    AttentionCmd ac;
    auto* at = app.add_subcommand("attention-export",
                                  "Pooling attention weights as JSON and DOT");
    at->add_option("--data", ac.data, "dataset name or graphs .json file")->required();
    at->add_option("--index", ac.index, "graph index within the dataset");
    at->add_option("--config", ac.config, "model JSON")->required();
    at->add_option("--checkpoint", ac.checkpoint, "parameters (else seed-initialized)");
    at->add_option("--seed", ac.seed, "64-bit master seed");
    at->add_option("--out", ac.out, "output basename (.json and .dot appended)")->required();
    at->add_option("--data-dir", ac.data_dir, "corpus root (else PATCHGT_DATA_DIR)");
    at->add_option("--manifest", ac.manifest, "replay manifest path");
    at->callback([&] {
        ac.manifest = manifest_or(ac.manifest, ac.out + ".manifest.json");
        std::vector<std::string> cmd{"attention-export", "--data", ac.data,
                                     "--index", std::to_string(ac.index),
                                     "--config", ac.config,
                                     "--seed", std::to_string(ac.seed),
                                     "--out", ac.out,
                                     "--manifest", ac.manifest};
        if (!ac.checkpoint.empty()) { cmd.push_back("--checkpoint"); cmd.push_back(ac.checkpoint); }
        if (!ac.data_dir.empty()) { cmd.push_back("--data-dir"); cmd.push_back(ac.data_dir); }
        write_manifest(ac.manifest, cmd);
        run_attention_export(ac);
    });

    GradcheckCmd gc;
    auto* gr = app.add_subcommand("gradcheck",
                                  "Finite-difference check of the full model");
    gr->add_option("--seed", gc.seed, "64-bit master seed");
    gr->add_option("--out", gc.out, "optional report JSON path");
    gr->add_option("--manifest", gc.manifest, "replay manifest path");
    gr->callback([&] {
        gc.manifest = manifest_or(
            gc.manifest, gc.out.empty() ? "patchgt-manifest.json" : gc.out + ".manifest.json");
        std::vector<std::string> cmd{"gradcheck", "--seed", std::to_string(gc.seed),
                                     "--manifest", gc.manifest};
        if (!gc.out.empty()) { cmd.push_back("--out"); cmd.push_back(gc.out); }
        write_manifest(gc.manifest, cmd);
        run_gradcheck(gc);
    });

    std::vector<const char*> argv;
    argv.push_back("patchgt");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse((int)argv.size(), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    try {
        return dispatch(args, 0);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}

}  // namespace patchgt
