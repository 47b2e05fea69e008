#pragma once

// The adversary. Three crafting routes build a malicious model whose
// targeted class is destroyed while the main task survives:
//   full knowledge:  train on generated non-target data while pushing the
//                    trap set (same images labeled as the target) uphill;
//   semi knowledge:  ascend on generated target samples, repair on local
//                    non-target data;
//   no knowledge:    synthesize target samples by model inversion first,
//                    then run the semi loop with them.
// The campaign then injects mixed updates
//   delta_m = gamma * delta_poi / ||delta_poi|| + beta * mean(benign)
// every round, re-fitting (gamma, beta) against the recovered previous
// aggregate, until the global model has been pulled onto the crafted one.

#include "fedlab/fl.hpp"

namespace fedlab {

struct AttackPlan {
    int y_tar = 0;
    double alpha1 = 1e-2; // craft descent/ascent rates; meaning depends on route
    double alpha2 = 1e-5;
    int r_end = 300;  // crafting rounds; also the mix-optimizer step budget
    int p_end = 2000; // model-inversion steps (no-knowledge route)

    // Model-inversion coefficients (no-knowledge route).
    double lambda0 = 1.0, lambda1 = 1e-2, lambda2 = 1e-6, lambda3 = 1.0;
    double deep_lr = 1e-2;
    int deep_count = 8; // synthesized target samples

    int craft_samples_per_class = 16; // full-knowledge generator draws
    int semi_samples_per_class = 8;   // semi-knowledge target draws

    double gamma0 = 10.0, beta0 = 1.0;
    double opt_lr_gamma = 1e-5, opt_lr_beta = 1e-5;
    double mix_stop_eps = 1e-9; // stop when L_dis moves less than this

    int campaign_rounds = 200;
    double replacement_tolerance = 0.01;
    bool tolerance_is_relative = true; // tolerance as a fraction of the initial distance

    std::uint64_t seed = 0;
};

struct CraftRound {
    double targeted_loss = 0.0; // adversary's target-probe loss after the round
    double main_loss = 0.0;     // main-task loss on the repair/training set
};

struct MaliciousArtifact {
    ParamVector phi_mal;
    Vec delta_poi; // phi_start.trainable - phi_mal.trainable at construction
    std::vector<CraftRound> trace;
    LabeledSet synthesized; // no-knowledge route: the inverted target set
};

MaliciousArtifact craft_full_knowledge(const ParamVector& phi0, const ModelSpec& spec,
                                       const KnowledgeView& view, const AttackPlan& plan);
MaliciousArtifact craft_semi_knowledge(const ParamVector& phi_g, const ModelSpec& spec,
                                       const KnowledgeView& view, const AttackPlan& plan);
MaliciousArtifact craft_no_knowledge(const ParamVector& phi_g, const ModelSpec& spec,
                                     const KnowledgeView& view, const AttackPlan& plan);
// Dispatch on view.level.
MaliciousArtifact craft(const ParamVector& phi_start, const ModelSpec& spec,
                        const KnowledgeView& view, const AttackPlan& plan);

// Synthesize `count` images the model classifies as y_tar, by descending
//   L = lambda0 * CE + lambda1 * TV + lambda2 * ||X||2 + lambda3 * R_f
// over pixels, where R_f matches the batch statistics at every BN layer to
// the model's running buffers. Output clipped to [0,1].
Tensor deep_invert(const ParamVector& phi_g, const ModelSpec& spec, int y_tar, int count,
                   const AttackPlan& plan);

struct MixResult {
    double gamma = 0.0, beta = 0.0;
    double l_dis = 0.0; // ||delta_m - delta_agr|| at the returned mix
    Vec delta_m;
    int steps_used = 0;
};

// Fit (gamma, beta) by SGD on L_dis = ||gamma*u + beta*benign - delta_agr||
// where u = delta_poi/||delta_poi||, delta_poi = cur - phi_mal, and delta_agr
// is recovered from the two consecutive global models.
MixResult optimize_malicious_update(const ParamVector& prev, const ParamVector& cur,
                                    const ParamVector& phi_mal, const Vec& delta_ben,
                                    const AttackPlan& plan, double alpha);

struct CampaignRow {
    int round = 0;
    double gamma = 0.0, beta = 0.0;
    double l_dis = 0.0;
    double distance = 0.0; // model distance to phi_mal after the round
    bool accepted = false; // any malicious id in the AGR's selected set
};

struct CampaignReport {
    double initial_distance = 0.0;
    double final_distance = 0.0;
    double tolerance = 0.0; // absolute threshold the campaign ran against
    int rounds_used = 0;
    bool success = false;
    std::vector<CampaignRow> rows;
};

CampaignReport run_poisoning_campaign(FlState& st, const FlConfig& cfg, const AgrConfig& agr,
                                      const ParamVector& phi_mal,
                                      const std::vector<int>& malicious_ids,
                                      const AttackPlan& plan, AuditLog* audit = nullptr);

} // namespace fedlab
