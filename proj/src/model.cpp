#include "patchgt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "patchgt/errors.hpp"

namespace patchgt {

void PatchGTConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 2.0))
        throw ConfigError("config: gamma must lie in [0, 2]");
    if (hidden_dim < 1) throw ConfigError("config: hidden_dim must be positive");
    if (heads < 1) throw ConfigError("config: heads must be positive");
    if (hidden_dim % heads != 0)
        throw ConfigError("config: hidden_dim must be divisible by heads");
    if (L1 < 0 || L2 < 0 || L3 < 0)
        throw ConfigError("config: layer counts must be nonnegative");
    if (!(attention_dropout >= 0.0 && attention_dropout < 1.0) ||
        !(embedding_dropout >= 0.0 && embedding_dropout < 1.0))
        throw ConfigError("config: dropout rates must lie in [0, 1)");
    if (num_tasks < 1) throw ConfigError("config: num_tasks must be positive");
}

namespace {

Mat glorot(Rng& rng, size_t out, size_t in) {
    Mat m(out, in);
    const double limit = std::sqrt(6.0 / (double)(in + out));
    for (double& v : m.a) v = rng.uniform(-limit, limit);
    return m;
}

// Width entering the patch stage: the node stage leaves features untouched
// when it has no layers.
int node_stage_out(const PatchGTConfig& config, int feat_dim) {
    return config.L1 > 0 ? config.hidden_dim : feat_dim;
}

}  // namespace

ModelParams ModelParams::init(const PatchGTConfig& config, int feat_dim, int edge_dim,
                              Rng& rng) {
    config.validate();
    if (feat_dim < 1) throw ConfigError("init: feature dimension must be positive");
    const int d = config.hidden_dim;

    ModelParams p;
    for (int l = 0; l < config.L1; ++l) {
        const int in = l == 0 ? feat_dim : d;
        if (config.gnn_kind == GnnKind::gcn) {
            GcnLayerParams layer;
            layer.w1 = glorot(rng, d, in);
            layer.w2 = glorot(rng, d, in);
            if (edge_dim > 0) layer.w3 = glorot(rng, d, edge_dim);
            p.node_gcn.push_back(std::move(layer));
        } else {
            GinLayerParams layer;
            layer.w_in = glorot(rng, d, in);
            layer.b_in = Mat(1, d);
            layer.w_out = glorot(rng, d, d);
            layer.b_out = Mat(1, d);
            layer.eps = Mat(1, 1);
            p.node_gin.push_back(std::move(layer));
        }
    }

    const int patch_in = node_stage_out(config, feat_dim);
    if (config.L2 == 0 && patch_in != d)
        throw ConfigError("init: with no node or patch layers the feature width " +
                          std::to_string(patch_in) + " must equal hidden_dim");
    for (int l = 0; l < config.L2; ++l) {
        const int in = l == 0 ? patch_in : d;
        if (config.gnn_kind == GnnKind::gcn) {
            GcnLayerParams layer;
            layer.w1 = glorot(rng, d, in);
            layer.w2 = glorot(rng, d, in);
            p.patch_gcn.push_back(std::move(layer));
        } else {
            GinLayerParams layer;
            layer.w_in = glorot(rng, d, in);
            layer.b_in = Mat(1, d);
            layer.w_out = glorot(rng, d, d);
            layer.b_out = Mat(1, d);
            layer.eps = Mat(1, 1);
            p.patch_gin.push_back(std::move(layer));
        }
    }

    const int dk = d / config.heads;
    for (int l = 0; l < config.L3; ++l) {
        PoolLayerParams layer;
        for (int h = 0; h < config.heads; ++h) {
            layer.mha.wq.push_back(glorot(rng, dk, d));
            layer.mha.wk.push_back(glorot(rng, dk, d));
            layer.mha.wv.push_back(glorot(rng, dk, d));
        }
        layer.mha.wo = glorot(rng, d, d);
        layer.mlp_w1 = glorot(rng, d, d);
        layer.mlp_b1 = Mat(1, d);
        layer.mlp_w2 = glorot(rng, d, d);
        layer.mlp_b2 = Mat(1, d);
        p.pool_layers.push_back(std::move(layer));
    }

    p.q0 = Mat(1, d);
    for (double& v : p.q0.a) v = 0.02 * rng.normal();
    p.ln_w = glorot(rng, d, d);
    p.ln_b = Mat(1, d);
    p.head_w = glorot(rng, config.num_tasks, d);
    p.head_b = Mat(1, config.num_tasks);
    return p;
}

namespace {

// One traversal defines the canonical parameter order for flatten(),
// assign() and BoundParams::bind(); keep them in step.
template <typename ParamsT, typename F>
void visit_params(ParamsT& p, F&& f) {
    for (size_t l = 0; l < p.node_gcn.size(); ++l) {
        auto& layer = p.node_gcn[l];
        const std::string tag = "node" + std::to_string(l);
        f(tag + ".w1", layer.w1);
        f(tag + ".w2", layer.w2);
        if (layer.w3.a.size()) f(tag + ".w3", layer.w3);
    }
    for (size_t l = 0; l < p.node_gin.size(); ++l) {
        auto& layer = p.node_gin[l];
        const std::string tag = "node" + std::to_string(l);
        f(tag + ".w_in", layer.w_in);
        f(tag + ".b_in", layer.b_in);
        f(tag + ".w_out", layer.w_out);
        f(tag + ".b_out", layer.b_out);
        f(tag + ".eps", layer.eps);
    }
    for (size_t l = 0; l < p.patch_gcn.size(); ++l) {
        auto& layer = p.patch_gcn[l];
        const std::string tag = "patch" + std::to_string(l);
        f(tag + ".w1", layer.w1);
        f(tag + ".w2", layer.w2);
    }
    for (size_t l = 0; l < p.patch_gin.size(); ++l) {
        auto& layer = p.patch_gin[l];
        const std::string tag = "patch" + std::to_string(l);
        f(tag + ".w_in", layer.w_in);
        f(tag + ".b_in", layer.b_in);
        f(tag + ".w_out", layer.w_out);
        f(tag + ".b_out", layer.b_out);
        f(tag + ".eps", layer.eps);
    }
    for (size_t l = 0; l < p.pool_layers.size(); ++l) {
        auto& layer = p.pool_layers[l];
        const std::string tag = "pool" + std::to_string(l);
        for (size_t h = 0; h < layer.mha.wq.size(); ++h) {
            const std::string head = tag + ".h" + std::to_string(h);
            f(head + ".wq", layer.mha.wq[h]);
            f(head + ".wk", layer.mha.wk[h]);
            f(head + ".wv", layer.mha.wv[h]);
        }
        f(tag + ".wo", layer.mha.wo);
        f(tag + ".mlp_w1", layer.mlp_w1);
        f(tag + ".mlp_b1", layer.mlp_b1);
        f(tag + ".mlp_w2", layer.mlp_w2);
        f(tag + ".mlp_b2", layer.mlp_b2);
    }
    f("q0", p.q0);
    f("ln.w", p.ln_w);
    f("ln.b", p.ln_b);
    f("head.w", p.head_w);
    f("head.b", p.head_b);
}

}  // namespace

std::vector<std::pair<std::string, Mat>> ModelParams::flatten() const {
    std::vector<std::pair<std::string, Mat>> out;
    visit_params(*this, [&](const std::string& name, const Mat& m) {
        out.emplace_back(name, m);
    });
    return out;
}

void ModelParams::assign(const std::vector<std::pair<std::string, Mat>>& named) {
    std::map<std::string, const Mat*> lookup;
    for (const auto& [name, m] : named) lookup[name] = &m;
    size_t used = 0;
    visit_params(*this, [&](const std::string& name, Mat& slot) {
        auto it = lookup.find(name);
        if (it == lookup.end())
            throw ContractError("assign: parameter " + name + " missing");
        if (it->second->rows != slot.rows || it->second->cols != slot.cols)
            throw ContractError("assign: parameter " + name + " has shape " +
                                std::to_string(it->second->rows) + "x" +
                                std::to_string(it->second->cols) + ", expected " +
                                std::to_string(slot.rows) + "x" +
                                std::to_string(slot.cols));
        slot = *it->second;
        ++used;
    });
    if (used != named.size())
        throw ContractError("assign: " + std::to_string(named.size() - used) +
                            " unknown parameters supplied");
}

BoundParams BoundParams::bind(Tape& tape, const ModelParams& params) {
    BoundParams bp;
    auto track = [&](const Mat& m) {
        Tensor t = tape.leaf(m);
        bp.flat.push_back(t);
        return t;
    };

    for (const auto& layer : params.node_gcn) {
        std::vector<Tensor> leaves = {track(layer.w1), track(layer.w2)};
        if (layer.w3.a.size()) leaves.push_back(track(layer.w3));
        bp.node_layers.push_back(std::move(leaves));
    }
    for (const auto& layer : params.node_gin) {
        bp.node_layers.push_back({track(layer.w_in), track(layer.b_in),
                                  track(layer.w_out), track(layer.b_out),
                                  track(layer.eps)});
    }
    for (const auto& layer : params.patch_gcn)
        bp.patch_layers.push_back({track(layer.w1), track(layer.w2)});
    for (const auto& layer : params.patch_gin) {
        bp.patch_layers.push_back({track(layer.w_in), track(layer.b_in),
                                   track(layer.w_out), track(layer.b_out),
                                   track(layer.eps)});
    }
    for (const auto& layer : params.pool_layers) {
        PoolLeaves pl;
        for (size_t h = 0; h < layer.mha.wq.size(); ++h) {
            pl.wq.push_back(track(layer.mha.wq[h]));
            pl.wk.push_back(track(layer.mha.wk[h]));
            pl.wv.push_back(track(layer.mha.wv[h]));
        }
        pl.wo = track(layer.mha.wo);
        pl.mlp_w1 = track(layer.mlp_w1);
        pl.mlp_b1 = track(layer.mlp_b1);
        pl.mlp_w2 = track(layer.mlp_w2);
        pl.mlp_b2 = track(layer.mlp_b2);
        bp.pool_layers.push_back(std::move(pl));
    }
    bp.q0 = track(params.q0);
    bp.ln_w = track(params.ln_w);
    bp.ln_b = track(params.ln_b);
    bp.head_w = track(params.head_w);
    bp.head_b = track(params.head_b);
    return bp;
}

Tensor gnn_layer(Tape& tape, Tensor a, Tensor m, Tensor h,
                 const std::vector<Tensor>& leaves) {
    if (leaves.size() != 2 && leaves.size() != 3)
        throw ContractError("gnn_layer: expected {w1, w2} or {w1, w2, w3}");
    Tensor pre = tape.add(tape.matmul(h, tape.transpose(leaves[0])),
                          tape.matmul(tape.matmul(a, h), tape.transpose(leaves[1])));
    if (leaves.size() == 3) {
        if (m.tape == nullptr)
            throw ContractError("gnn_layer: w3 given but no edge aggregate");
        pre = tape.add(pre, tape.matmul(m, tape.transpose(leaves[2])));
    }
    return tape.relu(pre);
}

Tensor gin_layer(Tape& tape, Tensor a, Tensor h, const std::vector<Tensor>& leaves) {
    if (leaves.size() != 5)
        throw ContractError("gin_layer: expected {w_in, b_in, w_out, b_out, eps}");
    Tensor agg = tape.add(tape.add(h, tape.scale_by(h, leaves[4])), tape.matmul(a, h));
    Tensor hidden = tape.relu(tape.linear(agg, leaves[0], leaves[1]));
    return tape.linear(hidden, leaves[2], leaves[3]);
}

Tensor patch_readout(Tape& tape, Tensor h, const PatchPartition& part,
                     ReadoutMode mode) {
    const Mat& hv = tape.value(h);
    const size_t n = hv.rows;
    if (part.assignment.size() != n)
        throw ContractError("patch_readout: partition does not cover the rows");

    std::vector<Tensor> rows;
    for (int c = 0; c < part.k; ++c) {
        std::vector<int> members;
        for (size_t i = 0; i < n; ++i)
            if (part.assignment[i] == c) members.push_back((int)i);
        if (members.empty())
            throw ContractError("patch_readout: empty patch " + std::to_string(c));
        Mat sel((size_t)members.size(), n);
        for (size_t r = 0; r < members.size(); ++r) sel.at(r, members[r]) = 1.0;
        Tensor block = tape.matmul(tape.constant(sel), h);
        if (mode == ReadoutMode::max_weighted) {
            const double w = (double)members.size() / (double)n;
            rows.push_back(tape.scalar_mul(tape.row_max_pool(block), w));
        } else {
            rows.push_back(tape.row_sum_pool(block));
        }
    }
    return tape.concat_rows(rows);
}

Tensor patch_gnn(Tape& tape, Tensor coarse_adj, Tensor z,
                 const std::vector<std::vector<Tensor>>& layers, GnnKind kind) {
    Tensor invalid;
    for (const auto& leaves : layers)
        z = kind == GnnKind::gcn ? gnn_layer(tape, coarse_adj, invalid, z, leaves)
                                 : gin_layer(tape, coarse_adj, z, leaves);
    return z;
}

namespace {

Mat dropout_mask(Rng& rng, size_t rows, size_t cols, double rate) {
    Mat m(rows, cols);
    const double keep = 1.0 - rate;
    for (double& v : m.a) v = rng.uniform01() < keep ? 1.0 / keep : 0.0;
    return m;
}

}  // namespace

MhaOutput mha(Tape& tape, Tensor q, Tensor z, const BoundParams::PoolLeaves& leaves,
              int heads, double attention_dropout, Rng* dropout_rng) {
    if ((int)leaves.wq.size() != heads)
        throw ContractError("mha: head count disagrees with projections");
    const size_t dk = tape.value(leaves.wq[0]).rows;
    const double scale = 1.0 / std::sqrt((double)dk);

    MhaOutput out;
    std::vector<Tensor> head_outs;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = tape.matmul(q, tape.transpose(leaves.wq[h]));
        Tensor kh = tape.matmul(z, tape.transpose(leaves.wk[h]));
        Tensor vh = tape.matmul(z, tape.transpose(leaves.wv[h]));
        Tensor att =
            tape.softmax_last(tape.scalar_mul(tape.matmul(qh, tape.transpose(kh)), scale));
        out.attention.push_back(tape.value(att));
        if (dropout_rng && attention_dropout > 0.0) {
            const Mat& av = tape.value(att);
            att = tape.mask_mul(att, dropout_mask(*dropout_rng, av.rows, av.cols,
                                                  attention_dropout));
        }
        head_outs.push_back(tape.matmul(att, vh));
    }
    Tensor cat = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    out.out = tape.matmul(cat, tape.transpose(leaves.wo));
    return out;
}

PoolResult transformer_pool(Tape& tape, Tensor z, const PatchGTConfig& config,
                            const BoundParams& bp, Rng* dropout_rng) {
    if (bp.pool_layers.empty())
        throw ContractError("transformer_pool: needs at least one layer");
    const size_t k = tape.value(z).rows;

    PoolResult result;
    Tensor q = bp.q0;
    for (const auto& layer : bp.pool_layers) {
        MhaOutput mo = mha(tape, q, z, layer, config.heads, config.attention_dropout,
                           dropout_rng);
        result.attention.push_back(std::move(mo.attention));
        Tensor attended = config.mha_scale_by_k ? tape.scalar_mul(mo.out, (double)k)
                                                : mo.out;
        Tensor hidden = tape.relu(tape.linear(attended, layer.mlp_w1, layer.mlp_b1));
        Tensor mlp_out = tape.linear(hidden, layer.mlp_w2, layer.mlp_b2);
        q = tape.add(mlp_out, q);
    }
    result.g = tape.linear(q, bp.ln_w, bp.ln_b);
    return result;
}

ForwardResult forward(Tape& tape, const Graph& g, const PatchPartition& part,
                      const PatchGTConfig& config, const BoundParams& bp,
                      Rng* dropout_rng) {
    config.validate();
    g.validate();
    if ((int)part.assignment.size() != g.num_nodes)
        throw ContractError("forward: partition does not match the graph");

    const int n = g.num_nodes;
    const int feat_dim = g.feat_dim();
    const int edge_dim = g.edge_dim();

    Mat x((size_t)n, (size_t)feat_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < feat_dim; ++j) x.at(i, j) = g.node_features[i][j];

    auto same_patch = [&](int u, int v) {
        return part.assignment[u] == part.assignment[v];
    };
    Mat adj((size_t)n, (size_t)n);
    for (auto [u, v] : g.edges) {
        if (config.per_patch_gnn && !same_patch(u, v)) continue;
        adj.at(u, v) = 1.0;
        adj.at(v, u) = 1.0;
    }

    const bool use_edges = config.gnn_kind == GnnKind::gcn && edge_dim > 0;
    Mat edge_aggregate;
    if (use_edges) {
        edge_aggregate = Mat((size_t)n, (size_t)edge_dim);
        for (size_t e = 0; e < g.edges.size(); ++e) {
            auto [u, v] = g.edges[e];
            if (config.per_patch_gnn && !same_patch(u, v)) continue;
            for (int j = 0; j < edge_dim; ++j) {
                edge_aggregate.at(u, j) += g.edge_features[e][j];
                edge_aggregate.at(v, j) += g.edge_features[e][j];
            }
        }
    }

    Tensor h = tape.constant(x);
    Tensor a = tape.constant(adj);
    Tensor m = use_edges ? tape.constant(edge_aggregate) : Tensor{};
    for (const auto& leaves : bp.node_layers)
        h = config.gnn_kind == GnnKind::gcn ? gnn_layer(tape, a, m, h, leaves)
                                            : gin_layer(tape, a, h, leaves);

    Tensor z = patch_readout(tape, h, part, config.readout);
    if (dropout_rng && config.embedding_dropout > 0.0) {
        const Mat& zv = tape.value(z);
        z = tape.mask_mul(z, dropout_mask(*dropout_rng, zv.rows, zv.cols,
                                          config.embedding_dropout));
    }

    Tensor coarse = tape.constant(coarse_graph(g, part));
    z = patch_gnn(tape, coarse, z, bp.patch_layers, config.gnn_kind);

    PoolResult pooled = transformer_pool(tape, z, config, bp, dropout_rng);

    ForwardResult result;
    result.attention = std::move(pooled.attention);
    result.logits = tape.linear(pooled.g, bp.head_w, bp.head_b);
    return result;
}

namespace {

const char* gnn_kind_name(GnnKind k) { return k == GnnKind::gcn ? "gcn" : "gin"; }
const char* readout_name(ReadoutMode m) {
    return m == ReadoutMode::max_weighted ? "max_weighted" : "sum";
}

}  // namespace

PatchGTConfig config_from_json_text(const std::string& text, const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(origin, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw IngestError(origin, "config must be a JSON object");

    PatchGTConfig config;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "gamma") config.gamma = value.get<double>();
            else if (key == "gnn_kind") {
                const std::string s = value.get<std::string>();
                if (s == "gcn") config.gnn_kind = GnnKind::gcn;
                else if (s == "gin") config.gnn_kind = GnnKind::gin;
                else throw ConfigError(origin + ": gnn_kind must be gcn or gin");
            } else if (key == "L1") config.L1 = value.get<int>();
            else if (key == "L2") config.L2 = value.get<int>();
            else if (key == "L3") config.L3 = value.get<int>();
            else if (key == "hidden_dim") config.hidden_dim = value.get<int>();
            else if (key == "heads") config.heads = value.get<int>();
            else if (key == "readout") {
                const std::string s = value.get<std::string>();
                if (s == "max_weighted") config.readout = ReadoutMode::max_weighted;
                else if (s == "sum") config.readout = ReadoutMode::sum;
                else throw ConfigError(origin + ": readout must be max_weighted or sum");
            } else if (key == "mha_scale_by_k") config.mha_scale_by_k = value.get<bool>();
            else if (key == "attention_dropout")
                config.attention_dropout = value.get<double>();
            else if (key == "embedding_dropout")
                config.embedding_dropout = value.get<double>();
            else if (key == "per_patch_gnn") config.per_patch_gnn = value.get<bool>();
            else if (key == "num_tasks") config.num_tasks = value.get<int>();
            else if (key == "lr" || key == "batch_size" || key == "epochs" ||
                     key == "folds") {
                // optimizer fields live in the same file; the trainer reads them
            } else {
                throw ConfigError(origin + ": unknown config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(origin + ": bad value for '" + key + "': " + e.what());
        }
    }
    config.validate();
    return config;
}

std::string config_to_json_text(const PatchGTConfig& config) {
    nlohmann::json j;
    j["gamma"] = config.gamma;
    j["gnn_kind"] = gnn_kind_name(config.gnn_kind);
    j["L1"] = config.L1;
    j["L2"] = config.L2;
    j["L3"] = config.L3;
    j["hidden_dim"] = config.hidden_dim;
    j["heads"] = config.heads;
    j["readout"] = readout_name(config.readout);
    j["mha_scale_by_k"] = config.mha_scale_by_k;
    j["attention_dropout"] = config.attention_dropout;
    j["embedding_dropout"] = config.embedding_dropout;
    j["per_patch_gnn"] = config.per_patch_gnn;
    j["num_tasks"] = config.num_tasks;
    return j.dump(1);
}

std::string attention_json(const Graph& g, const PatchPartition& part,
                           const std::vector<std::vector<Mat>>& attention) {
    nlohmann::json j;
    j["num_nodes"] = g.num_nodes;
    j["num_patches"] = part.k;
    j["patch_assignment"] = part.assignment;
    j["attention"] = nlohmann::json::array();
    for (const auto& layer : attention) {
        nlohmann::json heads = nlohmann::json::array();
        for (const Mat& w : layer) {
            nlohmann::json weights = nlohmann::json::array();
            for (double v : w.a) weights.push_back(v);
            heads.push_back(std::move(weights));
        }
        j["attention"].push_back(std::move(heads));
    }
    return j.dump(1);
}

std::string attention_dot(const Graph& g, const PatchPartition& part,
                          const std::vector<std::vector<Mat>>& attention) {
    // Node labels carry the final layer's head-averaged attention weight.
    std::vector<double> weight((size_t)part.k, 0.0);
    if (!attention.empty()) {
        const auto& last = attention.back();
        for (const Mat& head : last)
            for (int c = 0; c < part.k; ++c) weight[c] += head.at(0, c);
        for (double& w : weight) w /= (double)last.size();
    }

    Mat coarse = coarse_graph(g, part);
    std::ostringstream dot;
    dot << "graph patches {\n";
    for (int c = 0; c < part.k; ++c) {
        char label[64];
        std::snprintf(label, sizeof label, "P%d att=%.4f size=%d", c, weight[c],
                      part.patch_sizes.empty() ? -1 : part.patch_sizes[c]);
        dot << "  p" << c << " [label=\"" << label << "\"];\n";
    }
    for (int a = 0; a < part.k; ++a)
        for (int b = a; b < part.k; ++b)
            if (coarse.at(a, b) != 0.0) dot << "  p" << a << " -- p" << b << ";\n";
    dot << "}\n";
    return dot.str();
}

}  // namespace patchgt
