#pragma once

// Model zoo: two small reference architectures, a flat parameter vector with
// an explicit layout, graph-building forward passes, and the model-distance
// metric used to track how far the global model is from a crafted one.
//
// Parameters travel as one flat trainable vector plus a flat buffer vector
// (batch-norm running statistics). The layout manifest names every segment,
// so flattening is reproducible and update vectors align across modules.

#include "fedlab/graph.hpp"
#include "fedlab/rng.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fedlab {

enum class Arch { mlp, convnet_bn };

struct ModelSpec {
    Arch arch = Arch::convnet_bn;
    Index in_c = 1, in_h = 16, in_w = 16;
    int num_classes = 10;
    std::vector<Index> mlp_hidden = {32};  // hidden widths (mlp only)
    Index conv1 = 8, conv2 = 16;           // channel widths (convnet only)
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    Index input_size() const { return in_c * in_h * in_w; }
};

struct LayoutEntry {
    std::string name;
    bool buffer = false; // lives in the buffer vector instead of trainable
    Index offset = 0;    // within its own vector
    Shape shape;

    Index size() const { return shape_size(shape); }
};

struct ParamVector {
    Vec trainable;
    Vec buffers;
    std::vector<LayoutEntry> layout;

    const LayoutEntry& entry(const std::string& name) const;
};

std::vector<LayoutEntry> model_layout(const ModelSpec& spec);

// Kaiming-uniform weights, zero biases, BN gamma=1/beta=0, running mean=0 /
// var=1. Deterministic in (spec, seed).
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

void check_params(const ModelSpec& spec, const ParamVector& pv);

// Named per-layer views and their inverse; round-trips bit-exactly.
std::vector<std::pair<std::string, Tensor>> unflatten(const ParamVector& pv);
ParamVector flatten(const ModelSpec& spec,
                    const std::vector<std::pair<std::string, Tensor>>& parts);

enum class BnMode { train, eval };

// General 2-D cross-correlation: x [N,Ci,H,W], kernel w [Co,Ci,Kh,Kw], no
// bias. Differentiable w.r.t. both operands.
Var conv2d(Graph& g, Var x, Var w, Index stride, Index pad);

struct BatchNormOut {
    Var y;                     // gamma * normalized + beta
    Var batch_mean, batch_var; // per-channel batch statistics (graph nodes)
    Vec new_mean, new_var;     // running buffers after the pass (train mode)
};

// Per-channel batch normalization of x [N,C,H,W]. Train mode normalizes by
// batch statistics (biased variance) and reports updated running buffers as
// (1-momentum)*old + momentum*batch; eval mode normalizes by the running
// buffers. Batch statistics are materialized in both modes.
BatchNormOut batchnorm2d(Graph& g, Var x, Var gamma, Var beta, const Vec& run_mean,
                         const Vec& run_var, BnMode mode, double momentum, double eps);

struct ForwardOut {
    Var logits; // [M, num_classes]
    // Batch mean/variance of the activations entering each BN layer, in layer
    // order. Present in both modes (the feature regularizer reads them even
    // when normalization uses the running buffers).
    std::vector<std::pair<Var, Var>> bn_batch_stats;
    // Running buffers after this pass: updated from batch stats in train
    // mode, unchanged in eval mode.
    Vec new_buffers;
};

// Build the network as graph ops. `theta` is the flat trainable vector (leaf
// or constant, caller's choice), `x` the input batch [M,C,H,W]. Buffers are
// baked in as constants.
ForwardOut model_forward(Graph& g, const ModelSpec& spec, Var theta, Var x,
                         const Vec& buffers, BnMode mode);

// Eval-mode conveniences (fresh graph per call).
Vec predict_logits(const ModelSpec& spec, const ParamVector& pv, const Tensor& x);
double mean_loss(const ModelSpec& spec, const ParamVector& pv, const Tensor& x,
                 const std::vector<int>& labels);
double accuracy(const ModelSpec& spec, const ParamVector& pv, const Tensor& x,
                const std::vector<int>& labels);

enum class DistanceMode { per_layer, global_rms };

// Distance between two parameter vectors over trainable segments only.
// per_layer: sqrt(sum over layers of ||delta_l||^2 / d_l); global_rms:
// sqrt(||delta||^2 / d).
double model_distance(const ParamVector& a, const ParamVector& b,
                      DistanceMode mode = DistanceMode::per_layer);

} // namespace fedlab
