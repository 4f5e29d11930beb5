#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "patchgt/bottleneck.hpp"
#include "patchgt/errors.hpp"
#include "patchgt/graph.hpp"
#include "patchgt/metrics.hpp"
#include "patchgt/model.hpp"
#include "patchgt/rng.hpp"
#include "patchgt/spectral.hpp"
#include "patchgt/synthetic.hpp"
#include "patchgt/tensor.hpp"
#include "patchgt/train.hpp"
#include "patchgt/wl.hpp"

namespace py = pybind11;
using namespace patchgt;

namespace {

std::string gnn_kind_name(GnnKind k) { return k == GnnKind::gcn ? "gcn" : "gin"; }

GnnKind gnn_kind_of(const std::string& s) {
    if (s == "gcn") return GnnKind::gcn;
    if (s == "gin") return GnnKind::gin;
    throw ConfigError("gnn_kind must be 'gcn' or 'gin', got '" + s + "'");
}

std::string readout_name(ReadoutMode r) {
    return r == ReadoutMode::max_weighted ? "max_weighted" : "sum";
}

ReadoutMode readout_of(const std::string& s) {
    if (s == "max_weighted") return ReadoutMode::max_weighted;
    if (s == "sum") return ReadoutMode::sum;
    throw ConfigError("readout must be 'max_weighted' or 'sum', got '" + s + "'");
}

std::string metric_name(Metric m) { return m == Metric::roc_auc ? "roc_auc" : "accuracy"; }

Metric metric_of(const std::string& s) {
    if (s == "accuracy") return Metric::accuracy;
    if (s == "roc_auc") return Metric::roc_auc;
    throw ConfigError("metric must be 'accuracy' or 'roc_auc', got '" + s + "'");
}

std::vector<std::vector<double>> mat_rows(const Mat& m) {
    std::vector<std::vector<double>> rows(m.rows, std::vector<double>(m.cols));
    for (size_t i = 0; i < m.rows; ++i)
        for (size_t j = 0; j < m.cols; ++j) rows[i][j] = m.at(i, j);
    return rows;
}

std::vector<double> model_logits(const Graph& g, const PatchGTConfig& config,
                                 uint64_t seed, const std::string& init) {
    g.validate();
    config.validate();
    Rng rng(seed);
    ModelParams params = ModelParams::init(config, g.feat_dim(), g.edge_dim(), rng);
    if (init == "uniform") {
        // Every entry uniform in [-1, 1], biases included, query token zero.
        // Scaled initialization keeps biases at zero, which leaves the whole
        // network positively homogeneous; graphs that differ only by a patch
        // scaling relation then land on identical logits. This draw breaks
        // that symmetry.
        auto named = params.flatten();
        for (auto& [name, mat] : named)
            for (double& v : mat.a) v = rng.uniform(-1.0, 1.0);
        params.assign(named);
        params.q0 = Mat(1, (size_t)config.hidden_dim);
    } else if (init != "xavier") {
        throw ConfigError("init must be 'xavier' or 'uniform', got '" + init + "'");
    }
    const PatchPartition part = segment(g, config.gamma);
    Tape tape;
    const BoundParams bp = BoundParams::bind(tape, params);
    const Mat out = tape.value(forward(tape, g, part, config, bp).logits);
    return out.a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Graph classification with spectral patches: segmentation, color "
              "refinement comparison, the patch transformer, cross-validation "
              "training and perturbation-response experiments.";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const IngestError& e) {
            PyErr_SetString(PyExc_OSError, e.what());
        } catch (const NumericError& e) {
            PyErr_SetString(PyExc_ArithmeticError, e.what());
        } catch (const Error& e) {
            // ContractError and ConfigError both mark caller mistakes.
            PyErr_SetString(PyExc_ValueError, e.what());
        }
    });

    py::class_<Graph>(m, "Graph",
                      "Undirected graph; edges canonical as sorted (min, max) pairs, "
                      "labels NaN where missing.")
        .def(py::init<>())
        .def_readwrite("num_nodes", &Graph::num_nodes)
        .def_readwrite("edges", &Graph::edges)
        .def_readwrite("node_features", &Graph::node_features)
        .def_readwrite("edge_features", &Graph::edge_features)
        .def_readwrite("labels", &Graph::labels)
        .def("feat_dim", &Graph::feat_dim)
        .def("edge_dim", &Graph::edge_dim)
        .def("validate", &Graph::validate)
        .def("__repr__", [](const Graph& g) {
            return "Graph(num_nodes=" + std::to_string(g.num_nodes) +
                   ", edges=" + std::to_string(g.edges.size()) + ")";
        });

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<>())
        .def_readwrite("name", &Dataset::name)
        .def_readwrite("graphs", &Dataset::graphs)
        .def_readwrite("num_tasks", &Dataset::num_tasks)
        .def_property(
            "metric", [](const Dataset& d) { return metric_name(d.metric); },
            [](Dataset& d, const std::string& s) { d.metric = metric_of(s); })
        .def("__len__", [](const Dataset& d) { return d.graphs.size(); })
        .def("__repr__", [](const Dataset& d) {
            return "Dataset(name='" + d.name + "', graphs=" +
                   std::to_string(d.graphs.size()) + ")";
        });

    py::class_<PatchPartition>(m, "PatchPartition")
        .def_readonly("assignment", &PatchPartition::assignment)
        .def_readonly("k", &PatchPartition::k)
        .def_readonly("patch_sizes", &PatchPartition::patch_sizes)
        .def_readonly("gamma", &PatchPartition::gamma)
        .def_readonly("degenerate_fallback", &PatchPartition::degenerate_fallback)
        .def("__repr__", [](const PatchPartition& p) {
            return "PatchPartition(k=" + std::to_string(p.k) + ")";
        });

    py::class_<PatchGTConfig>(m, "Config", "Model shape and segmentation threshold.")
        .def(py::init<>())
        .def_readwrite("gamma", &PatchGTConfig::gamma)
        .def_readwrite("L1", &PatchGTConfig::L1)
        .def_readwrite("L2", &PatchGTConfig::L2)
        .def_readwrite("L3", &PatchGTConfig::L3)
        .def_readwrite("hidden_dim", &PatchGTConfig::hidden_dim)
        .def_readwrite("heads", &PatchGTConfig::heads)
        .def_readwrite("mha_scale_by_k", &PatchGTConfig::mha_scale_by_k)
        .def_readwrite("attention_dropout", &PatchGTConfig::attention_dropout)
        .def_readwrite("embedding_dropout", &PatchGTConfig::embedding_dropout)
        .def_readwrite("per_patch_gnn", &PatchGTConfig::per_patch_gnn)
        .def_readwrite("num_tasks", &PatchGTConfig::num_tasks)
        .def_property(
            "gnn_kind", [](const PatchGTConfig& c) { return gnn_kind_name(c.gnn_kind); },
            [](PatchGTConfig& c, const std::string& s) { c.gnn_kind = gnn_kind_of(s); })
        .def_property(
            "readout", [](const PatchGTConfig& c) { return readout_name(c.readout); },
            [](PatchGTConfig& c, const std::string& s) { c.readout = readout_of(s); })
        .def("validate", &PatchGTConfig::validate)
        .def("to_json", [](const PatchGTConfig& c) { return config_to_json_text(c); });

    m.def("segment", &segment, py::arg("graph"), py::arg("gamma"),
          "Spectral patch partition: patch count from the Laplacian spectrum at "
          "threshold gamma, then k-means on the eigenvector rows.");
    m.def(
        "laplacian_spectrum",
        [](const Graph& g) {
            g.validate();
            return eigendecompose(normalized_laplacian(g)).eigenvalues;
        },
        py::arg("graph"), "Ascending eigenvalues of the normalized Laplacian.");
    m.def(
        "coarse_adjacency",
        [](const Graph& g, const PatchPartition& part) {
            return mat_rows(coarse_graph(g, part));
        },
        py::arg("graph"), py::arg("partition"),
        "0/1 patch-level adjacency; diagonal marks patches with internal edges.");

    m.def("wl_distinguishable", &wl_distinguishable, py::arg("a"), py::arg("b"),
          "Whether color refinement tells the two graphs apart.");
    m.def(
        "wl_histogram", [](const Graph& g) { return wl_refine(g).histogram; },
        py::arg("graph"), "Stable color histogram of the graph alone.");

    m.def("logits", &model_logits, py::arg("graph"), py::arg("config"),
          py::arg("seed") = 0, py::arg("init") = "xavier",
          "Forward pass with fresh seed-initialized parameters; one logit per "
          "task. init='uniform' redraws every entry (biases included) uniform "
          "in [-1, 1] with a zero query token.");

    m.def(
        "load_dataset",
        [](const std::string& name_or_path, const std::string& data_dir) {
            return resolve_dataset(name_or_path, data_dir);
        },
        py::arg("name_or_path"), py::arg("data_dir") = "",
        "A graphs .json file, a TU-format directory, or a corpus name looked up "
        "under data_dir (else $PATCHGT_DATA_DIR).");
    m.def("load_json_graphs", &load_json_graphs, py::arg("path"),
          py::arg("name") = "json");
    m.def("save_json_graphs", &save_json_graphs, py::arg("dataset"), py::arg("path"));
    m.def("synthetic_separable", &synthetic_separable, py::arg("count"), py::arg("seed"),
          "Labeled toy corpus whose classes a linear head separates.");

    m.def("accuracy", &accuracy, py::arg("scores"), py::arg("labels"));
    m.def("roc_auc", &roc_auc, py::arg("scores"), py::arg("labels"));

    m.def(
        "cross_validate",
        [](const Dataset& ds, const PatchGTConfig& config, double lr, int batch_size,
           int epochs, int folds, uint64_t seed, int jobs,
           const std::string& checkpoint_dir) {
            OptimizerSettings opt;
            opt.lr = lr;
            opt.batch_size = batch_size;
            opt.epochs = epochs;
            opt.folds = folds;
            opt.validate();
            return train_run_json(cross_validate(ds, config, opt, seed, jobs,
                                                 checkpoint_dir));
        },
        py::arg("dataset"), py::arg("config"), py::arg("lr") = 1e-3,
        py::arg("batch_size") = 32, py::arg("epochs") = 50, py::arg("folds") = 10,
        py::arg("seed") = 0, py::arg("jobs") = 1, py::arg("checkpoint_dir") = "",
        py::call_guard<py::gil_scoped_release>(),
        "Stratified k-fold training; returns the run record as a JSON string "
        "(per-fold best epochs, test-at-best metrics, mean and spread).");

    m.def(
        "bottleneck_report",
        [](uint64_t seed, int jobs) {
            return bottleneck_report_json(run_bottleneck_grid(BottleneckGrid{}, seed,
                                                              jobs));
        },
        py::arg("seed") = 0, py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>(),
        "Perturbation-response ratios over the default two-cluster grid, as a "
        "JSON report string.");
}
