#pragma once

// Federated SGD: per-round client gradients on sampled batches, a robust
// aggregation step, and the server update
//     theta^t = theta^{t-1} - alpha * agg.
// The adversary-side inverse (recover_aggregate) reads the applied aggregate
// back off two consecutive global models; with the sign convention above the
// two compose to the identity.
//
// Batch-norm buffers ride alongside: clients report buffer deltas, the server
// averages them over the aggregation's selected set (rules without a selected
// set average over everyone) and applies them directly — robust filtering
// applies to gradients, not to the statistics.

#include "fedlab/agr.hpp"
#include "fedlab/data.hpp"
#include "fedlab/model.hpp"

#include <map>
#include <optional>

namespace fedlab {

struct FlConfig {
    ModelSpec model;
    int n_clients = 8;
    int batch = 4;
    double alpha = 0.1;
    std::uint64_t seed = 1;
};

struct FlState {
    ParamVector params;
    std::vector<LabeledSet> shards; // one per client
    LabeledSet server_val;          // server-side clean data (afa/fang, convergence)
    int round = 0;
};

GradientUpdate client_update(const ModelSpec& spec, const ParamVector& params,
                             const LabeledSet& batch, int client_id, int round);

ParamVector server_step(const ParamVector& params, const Vec& agg_values,
                        const Vec& buffer_delta, double alpha);

// (before.trainable - after.trainable) / alpha: the aggregate the server must
// have applied between two consecutive global models.
Vec recover_aggregate(const ParamVector& before, const ParamVector& after, double alpha);

// batch_size samples drawn without replacement (clamped to the shard size).
LabeledSet sample_batch(const LabeledSet& shard, int batch_size, Rng& rng);

struct RoundRecord {
    int round = 0;
    ParamVector before, after;
    AggregateResult agg;
    std::vector<GradientUpdate> updates; // as submitted, by client id
};

// One synchronous round. `overrides` replaces the listed clients' submissions
// (malicious injections); `forced_batches` pins every client's batch instead
// of sampling (the targeted-round setup uses this).
RoundRecord run_round(FlState& st, const FlConfig& cfg, const AgrConfig& agr,
                      const std::map<int, GradientUpdate>& overrides = {},
                      const std::vector<LabeledSet>* forced_batches = nullptr,
                      AuditLog* audit = nullptr);

struct TraceRow {
    int round = 0;
    double train_loss = 0.0;   // mean over this round's batches
    double train_acc = 0.0;    // over this round's batches
    double targeted_acc = -1.0; // on the probe set, -1 when absent
    double dist_phi_mal = -1.0; // -1 when no reference model given
};

struct TrainOptions {
    int rounds = 300;
    const LabeledSet* targeted_probe = nullptr; // for the targeted-class column
    const ParamVector* phi_mal = nullptr;       // for the distance column
    // Early stop when server_val loss moves less than eps across the trailing
    // window; 0 disables.
    double converge_eps = 0.0;
    int converge_window = 10;
};

std::vector<TraceRow> run_training(FlState& st, const FlConfig& cfg, const AgrConfig& agr,
                                   const TrainOptions& opt, AuditLog* audit = nullptr);

} // namespace fedlab
