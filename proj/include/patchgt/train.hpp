#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchgt/graph.hpp"
#include "patchgt/matrix.hpp"
#include "patchgt/model.hpp"
#include "patchgt/spectral.hpp"

namespace patchgt {

struct OptimizerSettings {
    double lr = 1e-3;
    int batch_size = 32;
    int epochs = 50;
    int folds = 10;

    void validate() const;  // throws ConfigError
};

// Reads lr / batch_size / epochs / folds from the same JSON object that
// carries the model config; absent keys keep the defaults.
OptimizerSettings optimizer_from_json_text(const std::string& text,
                                           const std::string& origin);

struct AdamState {
    std::vector<Mat> m, v;
    long long t = 0;
};

// Standard Adam (beta 0.9/0.999, eps 1e-8, bias-corrected) applied in place
// to the named flat parameter view. The state is sized lazily on first use
// and must then keep matching shapes.
void adam_step(std::vector<std::pair<std::string, Mat>>& params,
               const std::vector<Mat>& grads, AdamState& state, double lr);

struct Split {
    std::vector<int> train, val, test;
};

// Fold id per graph, stratified by the label vector: each label class is
// shuffled and dealt round-robin, carrying the dealing cursor across classes
// so fold sizes differ by at most one overall. A fold count exceeding any
// class's support leaves folds without that class and is a ConfigError.
std::vector<int> stratified_folds(const Dataset& ds, int folds, Rng& rng);

struct FoldResult {
    int fold = 0;
    int best_epoch = -1;
    double best_val = 0.0;
    double test_at_best = 0.0;
    std::vector<double> train_loss;  // per epoch, mean over training graphs
    std::vector<double> val_metric;  // per epoch
};

struct TrainRun {
    std::string dataset;
    std::string metric_name;
    PatchGTConfig config;
    OptimizerSettings opt;
    uint64_t seed = 0;
    std::vector<FoldResult> folds;
    double mean_test = 0.0;
    double stddev_test = 0.0;  // sample standard deviation across folds
};

// Dataset-level metric (ds.metric) of the model over the given graphs,
// dropout disabled: sigmoid scores per task, task metrics averaged. Tasks
// undefined on this subset (no labels, or one-class ROC) are skipped; all
// tasks undefined is a NumericError.
double evaluate_metric(const Dataset& ds, const std::vector<int>& idx,
                       const PatchGTConfig& config, const ModelParams& params,
                       const std::vector<PatchPartition>& parts);

// One split: minibatch Adam training with per-epoch validation; reports the
// test metric at the best-validation epoch (earliest wins ties) and fills
// best_params with that epoch's weights when given. Graphs are evaluated
// independently and their gradients averaged; parts indexes the whole
// dataset. Identical inputs give bitwise identical results.
FoldResult train_fold(const Dataset& ds, const PatchGTConfig& config,
                      const OptimizerSettings& opt, const Split& split, uint64_t seed,
                      const std::vector<PatchPartition>& parts,
                      ModelParams* best_params = nullptr);

// Stratified k-fold protocol: fold f tests on fold f, validates on fold
// (f+1) mod k, trains on the rest. jobs > 1 runs folds on worker threads;
// per-fold seeds are fixed up front so the thread count never changes any
// result. checkpoint_dir, when set, receives fold<f>.ckpt best-epoch
// weights.
TrainRun cross_validate(const Dataset& ds, const PatchGTConfig& config,
                        const OptimizerSettings& opt, uint64_t seed, int jobs = 1,
                        const std::string& checkpoint_dir = "");

std::string train_run_json(const TrainRun& run);

}  // namespace patchgt
