#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patchgt/matrix.hpp"

namespace patchgt {

class Tape;

// Handle into a Tape; cheap to copy, valid for the tape's lifetime.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;
};

// Reverse-mode autodiff over rank-<=2 values (scalars are 1x1, row vectors
// 1xd). Operations append nodes in topological order; backward() walks them
// once in reverse. One tape per logical thread; independent tapes may run
// concurrently and merge parameter gradients explicitly.
class Tape {
  public:
    // Tracked leaf: participates in backward(), grad persists and
    // accumulates across calls until zero_grad().
    Tensor leaf(const Mat& value);
    // Untracked input: constant data, never receives gradient.
    Tensor constant(const Mat& value);

    Tensor matmul(Tensor a, Tensor b);
    // Same shape, or b a 1 x cols row vector added to every row of a. No
    // other broadcasting: mismatches fail fast.
    Tensor add(Tensor a, Tensor b);
    Tensor scalar_mul(Tensor a, double s);
    // Elementwise a * s with a tracked 1x1 scalar s (the GIN epsilon case).
    Tensor scale_by(Tensor a, Tensor s);
    // Elementwise product with a same-shape constant mask (dropout); the mask
    // itself receives no gradient.
    Tensor mask_mul(Tensor a, const Mat& mask);
    Tensor relu(Tensor a);     // subgradient at exactly 0 is 0
    Tensor sigmoid(Tensor a);
    Tensor softmax_last(Tensor a);  // rowwise, max-subtracted
    Tensor linear(Tensor x, Tensor w, Tensor b);  // x w^T + b, b is 1 x out
    // Columnwise max over rows -> 1 x cols; ties keep the lowest row index
    // (recorded, and the tied backward sends gradient only there).
    Tensor row_max_pool(Tensor a);
    Tensor row_sum_pool(Tensor a);  // columnwise sum -> 1 x cols
    Tensor mean(Tensor a);          // mean of all entries -> 1x1
    Tensor concat_rows(const std::vector<Tensor>& parts);  // stack vertically
    Tensor concat_cols(const std::vector<Tensor>& parts);  // stack horizontally
    Tensor transpose(Tensor a);
    // Mean of elementwise binary cross-entropy between sigmoid(logits) and
    // targets over entries whose target is not NaN; NaN marks a missing
    // label. All-masked targets give exactly zero loss and gradient.
    // Computed in softplus form, never materializing sigmoid(logits).
    Tensor bce_masked(Tensor logits, const Mat& targets);

    const Mat& value(Tensor t) const;
    // Accumulated gradient of a tracked leaf.
    const Mat& grad(Tensor t) const;

    // Accumulates d(root)/d(leaf) into every tracked leaf's grad. root must
    // be 1x1. Repeated calls add up.
    void backward(Tensor root);
    void zero_grad();

    size_t size() const { return nodes_.size(); }

  private:
    enum class Op {
        leaf,
        constant,
        matmul,
        add,
        add_bias,
        scalar_mul,
        scale_by,
        mask_mul,
        relu,
        sigmoid,
        softmax_last,
        linear,
        row_max_pool,
        row_sum_pool,
        mean,
        concat_rows,
        concat_cols,
        transpose,
        bce_masked,
    };

    struct Node {
        Mat value;
        Mat grad;  // persistent accumulator, tracked leaves only
        Op op = Op::constant;
        bool tracked = false;
        int a = -1;
        int b = -1;
        int c = -1;
        std::vector<int> parts;   // concat inputs
        std::vector<size_t> memo; // row_max_pool argmax per column
        Mat aux;                  // saved activations / bce targets
        double scalar = 0.0;
    };

    int push(Node n);
    const Node& node_of(Tensor t) const;
    int check_mine(Tensor t) const;

    std::vector<Node> nodes_;
};

// Parameter checkpoint: a one-line JSON manifest of names and shapes,
// followed by the concatenated values as 64-bit little-endian floats in
// manifest order.
void save_checkpoint(const std::vector<std::pair<std::string, Mat>>& tensors,
                     const std::string& path);
std::vector<std::pair<std::string, Mat>> load_checkpoint(const std::string& path);

}  // namespace patchgt
