#pragma once

// Gradient inversion: optimize dummy pixels until the gradient they would
// produce matches a recovered aggregate. The pixel gradient differentiates the
// scalar objective *through* the parameter-gradient computation, so this is
// the double-backward consumer of the graph layer.

#include "fedlab/metrics.hpp"
#include "fedlab/model.hpp"

namespace fedlab {

enum class InvObjective { cosine, l2 };
enum class InvOptimizer { adam, sgd };

struct InversionTask {
    ModelSpec spec;
    ParamVector params; // global model the aggregate was recovered at
    Vec delta_agr;      // recovered aggregate over the flat trainable vector
    int y_tar = 0;
    int num_images = 1; // dummy samples optimized jointly

    // cosine: lambda0 * (1 - cos(dummy, delta_agr)); l2: lambda0 * ||diff||^2.
    InvObjective objective = InvObjective::cosine;
    double lambda0 = 10.0;  // gradient-match term
    double lambda1 = 1e-2;  // total variation
    double lambda2 = 1e-6;  // l2 norm of the image (squared behind the flag)
    double lambda3 = 1.0;   // distance from the [0,1] box
    bool squared_l2_reg = false;

    int steps = 2000;
    double lr = 0.1;
    InvOptimizer optimizer = InvOptimizer::adam;
    bool sign_step = false; // replace the pixel gradient with its sign
    std::uint64_t seed = 0;
};

struct InversionResult {
    Tensor images; // [M, C, H, W], raw optimizer output (exporters clip)
    std::vector<double> objective_trace;
};

// Mean cross-entropy gradient the M dummy images would produce against label
// y_tar, eval-mode BN, as a flat vector over the trainable parameters.
Vec dummy_gradient(const ModelSpec& spec, const ParamVector& params, const Tensor& images,
                   int y_tar);

// Same computation as a graph expression, differentiable w.r.t. `images`.
Var dummy_gradient_node(Graph& g, const ModelSpec& spec, const ParamVector& params,
                        Var images, int y_tar);

// The scalar objective for a given pixel tensor (fresh graph per call).
double inversion_objective(const InversionTask& task, const Tensor& images);

InversionResult invert(const InversionTask& task);

struct MatchScore {
    std::vector<int> assignment; // recovered i scored against originals[assignment[i]]
    std::vector<double> psnr_db;
    std::vector<double> ssim_val;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Pair recovered images with originals by the assignment that maximizes total
// PSNR (recovered images are clipped to [0,1] first, matching export).
MatchScore match_and_score(const Tensor& recovered, const Tensor& originals);

// Minimum-cost assignment over a square cost matrix; returns column per row.
// Exposed for the exhaustive-assignment cross-check.
std::vector<int> assignment_min_cost(const std::vector<std::vector<double>>& cost);

} // namespace fedlab
