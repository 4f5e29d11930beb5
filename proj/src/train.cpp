#include "patchgt/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "patchgt/errors.hpp"
#include "patchgt/metrics.hpp"
#include "patchgt/tensor.hpp"

namespace patchgt {

void OptimizerSettings::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw ConfigError("optimizer: learning rate must be positive");
    if (batch_size < 1) throw ConfigError("optimizer: batch size must be positive");
    if (epochs < 1) throw ConfigError("optimizer: epoch count must be positive");
    if (folds < 3)
        throw ConfigError("optimizer: needs at least 3 folds for disjoint "
                          "train/validation/test");
}

OptimizerSettings optimizer_from_json_text(const std::string& text,
                                           const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(origin, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw IngestError(origin, "config must be a JSON object");
    OptimizerSettings opt;
    try {
        if (j.contains("lr")) opt.lr = j["lr"].get<double>();
        if (j.contains("batch_size")) opt.batch_size = j["batch_size"].get<int>();
        if (j.contains("epochs")) opt.epochs = j["epochs"].get<int>();
        if (j.contains("folds")) opt.folds = j["folds"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(origin + ": bad optimizer value: " + e.what());
    }
    opt.validate();
    return opt;
}

void adam_step(std::vector<std::pair<std::string, Mat>>& params,
               const std::vector<Mat>& grads, AdamState& state, double lr) {
    if (params.size() != grads.size())
        throw ContractError("adam_step: parameter and gradient counts disagree");
    if (state.m.empty()) {
        for (const auto& [name, p] : params) {
            state.m.emplace_back(p.rows, p.cols);
            state.v.emplace_back(p.rows, p.cols);
        }
    }
    if (state.m.size() != params.size())
        throw ContractError("adam_step: state was built for another model");

    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state.t;
    const double bias1 = 1.0 - std::pow(beta1, (double)state.t);
    const double bias2 = 1.0 - std::pow(beta2, (double)state.t);
    for (size_t i = 0; i < params.size(); ++i) {
        Mat& p = params[i].second;
        const Mat& g = grads[i];
        if (g.rows != p.rows || g.cols != p.cols)
            throw ContractError("adam_step: gradient shape disagrees with " +
                                params[i].first);
        for (size_t e = 0; e < p.a.size(); ++e) {
            double& m = state.m[i].a[e];
            double& v = state.v[i].a[e];
            m = beta1 * m + (1.0 - beta1) * g.a[e];
            v = beta2 * v + (1.0 - beta2) * g.a[e] * g.a[e];
            p.a[e] -= lr * (m / bias1) / (std::sqrt(v / bias2) + eps);
        }
    }
}

std::vector<int> stratified_folds(const Dataset& ds, int folds, Rng& rng) {
    if (folds < 2) throw ConfigError("stratified_folds: needs at least 2 folds");
    if ((int)ds.graphs.size() < folds)
        throw ConfigError("stratified_folds: more folds than graphs");

    // Class key = the full label vector, so one-hot multi-task labels
    // stratify by class and missing labels form their own group.
    std::map<std::string, std::vector<int>> groups;
    for (size_t i = 0; i < ds.graphs.size(); ++i) {
        std::string key;
        for (double v : ds.graphs[i].labels)
            key += std::isnan(v) ? "?" : std::to_string(v) + ",";
        groups[key].push_back((int)i);
    }

    std::vector<int> fold_of(ds.graphs.size(), 0);
    int cursor = 0;
    for (auto& [key, members] : groups) {
        if ((int)members.size() < folds)
            throw ConfigError("stratified_folds: class with " +
                              std::to_string(members.size()) +
                              " graphs cannot fill " + std::to_string(folds) +
                              " folds");
        rng.shuffle(members);
        for (int idx : members) {
            fold_of[idx] = cursor;
            cursor = (cursor + 1) % folds;
        }
    }
    return fold_of;
}

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Mat targets_of(const Graph& g, int num_tasks) {
    if ((int)g.labels.size() != num_tasks)
        throw ContractError("train: graph carries " + std::to_string(g.labels.size()) +
                            " labels, config expects " + std::to_string(num_tasks));
    Mat t(1, (size_t)num_tasks);
    for (int i = 0; i < num_tasks; ++i) t.at(0, i) = g.labels[i];
    return t;
}

Mat eval_logits(const Graph& g, const PatchPartition& part, const PatchGTConfig& config,
                const ModelParams& params) {
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, params);
    return tape.value(forward(tape, g, part, config, bp).logits);
}

}  // namespace

double evaluate_metric(const Dataset& ds, const std::vector<int>& idx,
                       const PatchGTConfig& config, const ModelParams& params,
                       const std::vector<PatchPartition>& parts) {
    if (idx.empty()) throw ContractError("evaluate_metric: empty graph selection");
    std::vector<Mat> logits;
    logits.reserve(idx.size());
    for (int i : idx) {
        if ((int)ds.graphs[i].labels.size() != config.num_tasks)
            throw ContractError("evaluate_metric: graph carries " +
                                std::to_string(ds.graphs[i].labels.size()) +
                                " labels, config expects " +
                                std::to_string(config.num_tasks));
        logits.push_back(eval_logits(ds.graphs[i], parts[i], config, params));
    }

    double sum = 0.0;
    int tasks_used = 0;
    for (int t = 0; t < config.num_tasks; ++t) {
        std::vector<double> scores, labels;
        for (size_t r = 0; r < idx.size(); ++r) {
            scores.push_back(stable_sigmoid(logits[r].at(0, t)));
            labels.push_back(ds.graphs[idx[r]].labels[t]);
        }
        try {
            sum += ds.metric == Metric::roc_auc ? roc_auc(scores, labels)
                                                : accuracy(scores, labels);
            ++tasks_used;
        } catch (const Error&) {
            // Task undefined on this subset (unlabeled, or one-class ROC).
        }
    }
    if (tasks_used == 0)
        throw NumericError("evaluate_metric: no task is defined on this subset");
    return sum / tasks_used;
}

FoldResult train_fold(const Dataset& ds, const PatchGTConfig& config,
                      const OptimizerSettings& opt, const Split& split, uint64_t seed,
                      const std::vector<PatchPartition>& parts,
                      ModelParams* best_params) {
    config.validate();
    opt.validate();
    if (split.train.empty() || split.val.empty() || split.test.empty())
        throw ConfigError("train_fold: every split part needs at least one graph");
    if (parts.size() != ds.graphs.size())
        throw ContractError("train_fold: partition table does not cover the dataset");

    Rng root(seed);
    Rng shuffle_rng = root.derive(1);
    Rng dropout_rng = root.derive(2);
    Rng init_rng = root.derive(3);

    const Graph& probe = ds.graphs.at(split.train[0]);
    ModelParams params =
        ModelParams::init(config, probe.feat_dim(), probe.edge_dim(), init_rng);
    auto named = params.flatten();
    AdamState adam;

    FoldResult result;
    result.best_val = -std::numeric_limits<double>::infinity();
    ModelParams best = params;

    std::vector<int> order = split.train;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += (size_t)opt.batch_size) {
            const size_t stop = std::min(order.size(), start + (size_t)opt.batch_size);
            std::vector<Mat> grad_sum;
            for (const auto& [name, p] : named) grad_sum.emplace_back(p.rows, p.cols);
            for (size_t b = start; b < stop; ++b) {
                const Graph& g = ds.graphs[order[b]];
                Tape tape;
                BoundParams bp = BoundParams::bind(tape, params);
                Tensor loss = tape.bce_masked(
                    forward(tape, g, parts[order[b]], config, bp, &dropout_rng).logits,
                    targets_of(g, config.num_tasks));
                tape.backward(loss);
                loss_sum += tape.value(loss).at(0, 0);
                for (size_t i = 0; i < named.size(); ++i) {
                    const Mat& gmat = tape.grad(bp.flat[i]);
                    for (size_t e = 0; e < gmat.a.size(); ++e)
                        grad_sum[i].a[e] += gmat.a[e];
                }
            }
            const double inv = 1.0 / (double)(stop - start);
            for (Mat& gmat : grad_sum)
                for (double& v : gmat.a) v *= inv;
            adam_step(named, grad_sum, adam, opt.lr);
            params.assign(named);
        }
        result.train_loss.push_back(loss_sum / (double)order.size());

        const double val = evaluate_metric(ds, split.val, config, params, parts);
        result.val_metric.push_back(val);
        if (val > result.best_val) {
            result.best_val = val;
            result.best_epoch = epoch;
            result.test_at_best = evaluate_metric(ds, split.test, config, params, parts);
            best = params;
        }
    }
    if (best_params) *best_params = std::move(best);
    return result;
}

TrainRun cross_validate(const Dataset& ds, const PatchGTConfig& config,
                        const OptimizerSettings& opt, uint64_t seed, int jobs,
                        const std::string& checkpoint_dir) {
    config.validate();
    opt.validate();
    if (ds.graphs.empty()) throw ContractError("cross_validate: empty dataset");

    Rng strat_rng = Rng(seed).derive(0x5F);
    const std::vector<int> fold_of = stratified_folds(ds, opt.folds, strat_rng);
    const std::vector<PatchPartition> parts =
        segment_dataset(ds, config.gamma, "", jobs);

    const int folds = opt.folds;
    Rng master(seed);
    std::vector<uint64_t> fold_seeds;
    for (int f = 0; f < folds; ++f)
        fold_seeds.push_back(master.derive(0xF01D + (uint64_t)f).next_u64());

    TrainRun run;
    run.dataset = ds.name;
    run.metric_name = ds.metric == Metric::roc_auc ? "roc_auc" : "accuracy";
    run.config = config;
    run.opt = opt;
    run.seed = seed;
    run.folds.resize(folds);

    std::vector<ModelParams> bests(checkpoint_dir.empty() ? 0 : folds);
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto worker = [&]() {
        for (;;) {
            const int f = next.fetch_add(1);
            if (f >= folds) return;
            try {
                Split split;
                const int val_fold = (f + 1) % folds;
                for (size_t i = 0; i < fold_of.size(); ++i) {
                    if (fold_of[i] == f) split.test.push_back((int)i);
                    else if (fold_of[i] == val_fold) split.val.push_back((int)i);
                    else split.train.push_back((int)i);
                }
                FoldResult fr = train_fold(ds, config, opt, split, fold_seeds[f], parts,
                                           bests.empty() ? nullptr : &bests[f]);
                fr.fold = f;
                run.folds[f] = std::move(fr);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };

    const int workers = std::max(1, std::min(jobs, folds));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    double sum = 0.0;
    for (const auto& fr : run.folds) sum += fr.test_at_best;
    run.mean_test = sum / folds;
    if (folds > 1) {
        double sq = 0.0;
        for (const auto& fr : run.folds) {
            const double d = fr.test_at_best - run.mean_test;
            sq += d * d;
        }
        run.stddev_test = std::sqrt(sq / (folds - 1));
    }

    if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        for (int f = 0; f < folds; ++f)
            save_checkpoint(bests[f].flatten(),
                            checkpoint_dir + "/fold" + std::to_string(f) + ".ckpt");
    }
    return run;
}

std::string train_run_json(const TrainRun& run) {
    nlohmann::json j;
    j["dataset"] = run.dataset;
    j["metric"] = run.metric_name;
    j["seed"] = run.seed;
    j["config"] = nlohmann::json::parse(config_to_json_text(run.config));
    j["optimizer"] = {{"lr", run.opt.lr},
                      {"batch_size", run.opt.batch_size},
                      {"epochs", run.opt.epochs},
                      {"folds", run.opt.folds}};
    j["folds"] = nlohmann::json::array();
    for (const auto& fr : run.folds) {
        j["folds"].push_back({{"fold", fr.fold},
                              {"best_epoch", fr.best_epoch},
                              {"val_at_best", fr.best_val},
                              {"test_at_best", fr.test_at_best},
                              {"train_loss", fr.train_loss},
                              {"val_metric", fr.val_metric}});
    }
    j["summary"] = {{"mean", run.mean_test}, {"stddev", run.stddev_test}};
    return j.dump(1);
}

}  // namespace patchgt
