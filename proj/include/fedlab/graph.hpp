#pragma once

// Define-by-run autodiff on an append-only node arena.
//
// Every op evaluates eagerly and records a node; grad() walks the recorded
// nodes in reverse and *emits new ops* for the adjoints. Because the backward
// pass is itself made of graph ops, calling grad() on an expression built
// from a previous grad() result differentiates through that gradient — the
// property the reconstruction stage depends on (its objective contains a
// parameter gradient, and it optimizes pixels through it).
//
// The primitive set is deliberately small. Broadcasting, padding, im2col,
// slicing and pooling all reduce to gather / scatter_add with a precomputed
// index map (entry -1 reads as zero), which keeps every backward rule a
// one-liner in terms of other primitives.

#include "fedlab/tensor.hpp"

#include <deque>
#include <memory>
#include <span>
#include <vector>

namespace fedlab {

enum class Op : std::uint8_t {
    leaf,        // differentiable input
    constant,    // gradient barrier (also used for masks and detached values)
    add,
    sub,
    mul,         // elementwise, same shape
    neg,
    scale,       // x * c, c a fixed scalar payload
    add_const,   // x + c
    recip,
    log_e,
    exp_e,
    sqrt_e,
    abs_e,       // backward uses sign(x) as a constant mask
    relu,
    clip,        // clamp to [payload lo, hi]; backward masks the interior
    matmul,      // [m,k] x [k,n]
    transpose2d, // [m,n] -> [n,m]
    reshape,
    sum,         // total reduction to a scalar
    bcast,       // scalar -> any shape (adjoint of sum)
    gather,      // out[i] = map[i] < 0 ? 0 : in[map[i]]
    scatter_add, // out[j] = sum over i with map[i] == j of in[i]
};

using IndexMap = std::shared_ptr<const std::vector<Index>>;

class Graph;

// Cheap handle into a Graph. Valid as long as the graph lives.
struct Var {
    Graph* g = nullptr;
    int id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor& val() const;
    const Shape& shape() const { return val().shape(); }
    Scalar item() const { return val().item(); }
};

class Graph {
public:
    struct Node {
        Op op;
        int a = -1; // first input
        int b = -1; // second input
        Tensor val;
        Scalar c0 = 0.0, c1 = 0.0; // scalar payloads (scale factor, clip bounds)
        IndexMap map;              // gather/scatter index map
    };

    Var leaf(Tensor t);
    Var constant(Tensor t);
    Var constant(Scalar v) { return constant(Tensor::scalar(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, Scalar c);
    Var add_const(Var a, Scalar c);
    Var recip(Var a);
    Var log(Var a);
    Var exp(Var a);
    Var sqrt(Var a);
    Var abs(Var a);
    Var relu(Var a);
    Var clip(Var a, Scalar lo, Scalar hi);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var reshape(Var a, Shape shape);
    Var sum(Var a);
    Var bcast(Var a, Shape shape);
    Var gather(Var a, IndexMap map, Shape out_shape);
    Var scatter_add(Var a, IndexMap map, Shape out_shape);

    // Re-enter the graph with the same value but no gradient history.
    Var detach(Var a) { return constant(at(a.id).val); }

    // Adjoints of y (a scalar) with respect to each x in xs. Unreached inputs
    // get explicit zeros. The returned vars live in this graph, so they can be
    // combined into new expressions and differentiated again.
    std::vector<Var> grad(Var y, std::span<const Var> xs);
    Var grad(Var y, Var x) { return grad(y, std::span<const Var>(&x, 1))[0]; }

    const Node& at(int id) const { return nodes_[std::size_t(id)]; }
    int node_count() const { return int(nodes_.size()); }

private:
    Var emit(Node n);
    Var binary_same_shape(Op op, Var a, Var b, const char* name);
    void check_mine(Var v, const char* name) const;

    // deque: node references (val/shape) stay valid while the graph grows
    std::deque<Node> nodes_;
};

inline const Tensor& Var::val() const {
    require(valid(), "Var: use of an empty handle");
    return g->at(id).val;
}

// -- composite expressions used across modules -------------------------------

// sum(a * b) as a scalar.
Var dot(Var a, Var b);

// sqrt(sum(x^2) + eps). eps = 0 is exact but has an unbounded derivative at 0;
// callers that optimize through a norm pass a tiny eps instead.
Var l2_norm(Var x, Scalar eps = 0.0);

// Mean softmax cross-entropy of row-major logits [B, C] against labels, via a
// numerically safe log-sum-exp with a detached row max.
Var cross_entropy(Var logits, const std::vector<int>& labels);

// Anisotropic total variation of images [M, C, H, W]: mean over images of the
// summed absolute differences between horizontally and vertically adjacent
// pixels.
Var total_variation(Var images);

// Index-map builders (shared by ops and by tests that need oracles).
IndexMap make_permute_map(const Shape& in_shape, const std::vector<int>& perm);
IndexMap make_row_map(Index rows, Index cols);     // element -> its row
IndexMap make_label_map(const std::vector<int>& labels, Index cols);
IndexMap make_channel_map(Index n, Index c, Index hw); // NCHW element -> channel
IndexMap make_im2col_map(Index n, Index c, Index h, Index w, Index kh, Index kw,
                         Index pad, Index stride);

} // namespace fedlab
