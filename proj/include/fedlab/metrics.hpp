#pragma once

// Reconstruction and attack-quality metrics: PSNR/SSIM over [0,1] images,
// the loss-gap signal between two consecutive global models, and the
// closed-form probabilities of catching a lone target sample in aggregation.

#include "fedlab/model.hpp"
#include "fedlab/tensor.hpp"

#include <vector>

namespace fedlab {

// 10*log10(1 / MSE) over all elements, capped at 100 dB (identical inputs
// would otherwise be infinite). Inputs are expected in [0, 1].
double psnr(const Tensor& a, const Tensor& b);

// Mean SSIM over all 7x7 uniform windows and channels, C1 = 0.01^2,
// C2 = 0.03^2 for unit dynamic range, biased variances. Images smaller than
// the window fall back to one global window (logged).
double ssim(const Tensor& a, const Tensor& b);

enum class LossGapMode { delta, ratio };

// delta: dL_tar / (dL_tar + dL_main), where dL_x = |loss(after, x) -
// loss(before, x)|. ratio: L_tar / (L_tar + L_main) on `after` alone.
// Both-zero denominators return 0 (logged).
double loss_gap(const ModelSpec& spec, const ParamVector& before, const ParamVector& after,
                const Tensor& x_tar, const std::vector<int>& y_tar, const Tensor& x_main,
                const std::vector<int>& y_main, LossGapMode mode = LossGapMode::delta);

struct InversionProbabilities {
    double p_target = 0.0;   // target appears in at least one batch overall
    double p_best = 0.0;     // exactly one target copy across all N batches
    double p_best_agr = 0.0; // same, restricted to a selected subset of size s
};

// n: samples per client pool, k: batch size, capital N: clients per round,
// s: size of the aggregation's selected set. effective_n, when positive,
// replaces N in the formulas (e.g. N - m when malicious clients submit
// near-empty updates). Evaluated in log space so tiny values stay exact.
InversionProbabilities inversion_probabilities(double n, double k, double N, double s,
                                               double effective_n = -1.0);

// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

} // namespace fedlab
