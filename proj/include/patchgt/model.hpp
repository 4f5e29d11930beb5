#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patchgt/graph.hpp"
#include "patchgt/matrix.hpp"
#include "patchgt/rng.hpp"
#include "patchgt/spectral.hpp"
#include "patchgt/tensor.hpp"

namespace patchgt {

enum class GnnKind { gcn, gin };
enum class ReadoutMode { max_weighted, sum };

struct PatchGTConfig {
    double gamma = 0.1;
    GnnKind gnn_kind = GnnKind::gcn;
    int L1 = 4;          // node GNN depth
    int L2 = 2;          // patch GNN depth
    int L3 = 2;          // pooling transformer depth
    int hidden_dim = 64;
    int heads = 4;
    ReadoutMode readout = ReadoutMode::max_weighted;
    bool mha_scale_by_k = false;
    double attention_dropout = 0.0;
    double embedding_dropout = 0.0;
    bool per_patch_gnn = false;  // mask node message passing to within-patch edges
    int num_tasks = 1;

    void validate() const;  // throws ConfigError
};

// One node-GNN layer, relu(H W1^T + A H W2^T [+ M W3^T]) form; w3 is present
// only when the graph carries edge features (M aggregates the features of
// the edges incident to each node). Also the patch-GNN layer shape, with w3
// empty there.
struct GcnLayerParams {
    Mat w1, w2, w3;
};

// One GIN layer: two-linear relu MLP over (1 + eps) h_i + sum of neighbor
// rows; eps is a learnable 1x1 starting at zero.
struct GinLayerParams {
    Mat w_in, b_in, w_out, b_out, eps;
};

struct MhaParams {
    std::vector<Mat> wq, wk, wv;  // per head, (d/H) x d
    Mat wo;                       // d x d output projection
};

struct PoolLayerParams {
    MhaParams mha;
    Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // d->d->d with relu between
};

struct ModelParams {
    std::vector<GcnLayerParams> node_gcn;   // one of each stage pair is
    std::vector<GinLayerParams> node_gin;   // populated, matching
    std::vector<GcnLayerParams> patch_gcn;  // config.gnn_kind
    std::vector<GinLayerParams> patch_gin;
    std::vector<PoolLayerParams> pool_layers;
    Mat q0;            // 1 x d learnable query token
    Mat ln_w, ln_b;    // final learnable linear map (d x d, 1 x d)
    Mat head_w, head_b;  // prediction head, num_tasks x d and 1 x num_tasks

    // Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero, q0 drawn
    // from N(0, 0.02^2), GIN eps zero.
    static ModelParams init(const PatchGTConfig& config, int feat_dim, int edge_dim,
                            Rng& rng);

    // Stable named flat view: the contract for optimizers, checkpoints and
    // finite-difference checks. assign() is the inverse and validates names
    // and shapes against the current structure.
    std::vector<std::pair<std::string, Mat>> flatten() const;
    void assign(const std::vector<std::pair<std::string, Mat>>& named);
};

// The same parameters as tape leaves, so one model can be differentiated on
// several tapes concurrently and the gradients merged explicitly. Leaf order
// matches ModelParams::flatten().
struct BoundParams {
    std::vector<std::vector<Tensor>> node_layers;  // gcn: {w1,w2[,w3]}; gin: 5 leaves
    std::vector<std::vector<Tensor>> patch_layers; // {w1, w2}
    struct PoolLeaves {
        std::vector<Tensor> wq, wk, wv;
        Tensor wo;
        Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<PoolLeaves> pool_layers;
    Tensor q0, ln_w, ln_b, head_w, head_b;
    std::vector<Tensor> flat;  // flatten() order, for gradient collection

    static BoundParams bind(Tape& tape, const ModelParams& params);
};

// relu(H W1^T + A H W2^T [+ M W3^T]); M may be empty for no edge term.
Tensor gnn_layer(Tape& tape, Tensor a, Tensor m, Tensor h,
                 const std::vector<Tensor>& leaves);

// MLP((1 + eps) H + A H) with the two-linear relu MLP.
Tensor gin_layer(Tape& tape, Tensor a, Tensor h, const std::vector<Tensor>& leaves);

// Per-patch readout rows stacked into Z0 (k x width). max_weighted scales the
// columnwise max by |patch| / |V|; sum is the plain columnwise sum.
Tensor patch_readout(Tape& tape, Tensor h, const PatchPartition& part,
                     ReadoutMode mode);

// L2 coarse-graph layers over the 0/1 patch adjacency, never with edge
// features. The layer kind follows the node stage: gcn applies gnn_layer,
// gin applies gin_layer (whose MLP biases let patch counts separate graphs
// that pure scaling relations would otherwise collapse).
Tensor patch_gnn(Tape& tape, Tensor coarse_adj, Tensor z,
                 const std::vector<std::vector<Tensor>>& layers, GnnKind kind);

struct MhaOutput {
    Tensor out;                  // 1 x d
    std::vector<Mat> attention;  // per head, 1 x k softmax weights (values)
};

// Scaled dot-product attention of a single query row over K = V = Z, H heads
// concatenated then output-projected. dropout_rng enables attention dropout.
MhaOutput mha(Tape& tape, Tensor q, Tensor z, const BoundParams::PoolLeaves& leaves,
              int heads, double attention_dropout, Rng* dropout_rng);

struct PoolResult {
    Tensor g;                                 // 1 x d
    std::vector<std::vector<Mat>> attention;  // [layer][head] weights
};

// q_l = MLP(MHA(q_{l-1}, Z, Z) [* k]) + q_{l-1}, then the learnable linear
// map. Z is carried through unchanged.
PoolResult transformer_pool(Tape& tape, Tensor z, const PatchGTConfig& config,
                            const BoundParams& bp, Rng* dropout_rng);

struct ForwardResult {
    Tensor logits;                            // 1 x num_tasks
    std::vector<std::vector<Mat>> attention;  // [pool layer][head]
};

// Full pipeline. part must come from segment(g, config.gamma) (or an
// equivalent cache). dropout_rng null disables both dropout sites
// (evaluation mode).
ForwardResult forward(Tape& tape, const Graph& g, const PatchPartition& part,
                      const PatchGTConfig& config, const BoundParams& bp,
                      Rng* dropout_rng = nullptr);

// JSON round-trip for configs (the CLI's --config file format).
PatchGTConfig config_from_json_text(const std::string& text, const std::string& origin);
std::string config_to_json_text(const PatchGTConfig& config);

// attention-export payload: patch assignment plus per-layer/head weights for
// one graph, and a DOT rendering of the coarse graph where node labels carry
// the last layer's head-averaged attention.
std::string attention_json(const Graph& g, const PatchPartition& part,
                           const std::vector<std::vector<Mat>>& attention);
std::string attention_dot(const Graph& g, const PatchPartition& part,
                          const std::vector<std::vector<Mat>>& attention);

}  // namespace patchgt
