#include "fedlab/fl.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace fedlab {

GradientUpdate client_update(const ModelSpec& spec, const ParamVector& params,
                             const LabeledSet& batch, int client_id, int round) {
    require(batch.count() > 0, "client_update: empty batch");
    Graph g;
    Var theta = g.leaf(Tensor(params.trainable, {params.trainable.size()}));
    Var x = g.constant(batch.images);
    ForwardOut fw = model_forward(g, spec, theta, x, params.buffers, BnMode::train);
    Var loss = cross_entropy(fw.logits, batch.labels);

    GradientUpdate u;
    u.client_id = client_id;
    u.round = round;
    u.values = g.grad(loss, theta).val().values();
    u.buffer_delta = fw.new_buffers - params.buffers;
    u.train_loss = loss.item();

    const Vec& logits = fw.logits.val().values();
    const Index c = Index(spec.num_classes);
    Index hits = 0;
    for (Index i = 0; i < batch.count(); ++i) {
        Index best = 0;
        for (Index j = 1; j < c; ++j)
            if (logits[i * c + j] > logits[i * c + best]) best = j;
        hits += (best == Index(batch.labels[std::size_t(i)]));
    }
    u.train_acc = double(hits) / double(batch.count());
    return u;
}

ParamVector server_step(const ParamVector& params, const Vec& agg_values,
                        const Vec& buffer_delta, double alpha) {
    require(agg_values.size() == params.trainable.size(), "server_step: gradient size mismatch");
    require(buffer_delta.size() == params.buffers.size(), "server_step: buffer size mismatch");
    ParamVector next = params;
    next.trainable -= alpha * agg_values;
    next.buffers += buffer_delta;
    require(next.trainable.allFinite() && next.buffers.allFinite(),
            "server_step: non-finite parameters");
    return next;
}

Vec recover_aggregate(const ParamVector& before, const ParamVector& after, double alpha) {
    require(alpha != 0.0, "recover_aggregate: alpha must be nonzero");
    require(before.trainable.size() == after.trainable.size(),
            "recover_aggregate: size mismatch");
    return (before.trainable - after.trainable) / alpha;
}

LabeledSet sample_batch(const LabeledSet& shard, int batch_size, Rng& rng) {
    require(batch_size > 0, "sample_batch: batch size must be positive");
    const Index n = shard.count();
    require(n > 0, "sample_batch: empty shard");
    const Index b = std::min<Index>(batch_size, n);

    std::vector<Index> pool(std::size_t(n), Index(0));
    for (Index i = 0; i < n; ++i) pool[std::size_t(i)] = i;
    for (Index i = 0; i < b; ++i) {
        const Index j = i + Index(rng.below(std::uint64_t(n - i)));
        std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
    }
    pool.resize(std::size_t(b));
    return subset(shard, pool);
}

RoundRecord run_round(FlState& st, const FlConfig& cfg, const AgrConfig& agr,
                      const std::map<int, GradientUpdate>& overrides,
                      const std::vector<LabeledSet>* forced_batches, AuditLog* audit) {
    require(int(st.shards.size()) == cfg.n_clients, "run_round: shard count != client count");
    if (forced_batches)
        require(int(forced_batches->size()) == cfg.n_clients,
                "run_round: forced batch count != client count");

    RoundRecord rec;
    rec.round = st.round;
    rec.before = st.params;

    for (int i = 0; i < cfg.n_clients; ++i) {
        auto it = overrides.find(i);
        if (it != overrides.end()) {
            GradientUpdate u = it->second;
            require(u.values.size() == st.params.trainable.size(),
                    "run_round: injected update has wrong size");
            require(u.buffer_delta.size() == st.params.buffers.size(),
                    "run_round: injected buffer delta has wrong size");
            u.client_id = i;
            u.round = st.round;
            rec.updates.push_back(std::move(u));
            continue;
        }
        LabeledSet batch;
        if (forced_batches) {
            batch = (*forced_batches)[std::size_t(i)];
        } else {
            Rng rng(derive_seed(cfg.seed, {0xba7cu, std::uint64_t(st.round), std::uint64_t(i)}));
            batch = sample_batch(st.shards[std::size_t(i)], cfg.batch, rng);
        }
        rec.updates.push_back(client_update(cfg.model, st.params, batch, i, st.round));
    }

    AgrContext ctx{&cfg.model, &st.params, &st.server_val, cfg.alpha};
    rec.agg = aggregate(agr, rec.updates, &ctx);
    if (audit) audit->record(agr, st.round, rec.agg);

    st.params = server_step(st.params, rec.agg.values, rec.agg.buffer_delta, cfg.alpha);
    st.round += 1;
    rec.after = st.params;
    return rec;
}

std::vector<TraceRow> run_training(FlState& st, const FlConfig& cfg, const AgrConfig& agr,
                                   const TrainOptions& opt, AuditLog* audit) {
    std::vector<TraceRow> trace;
    std::deque<double> recent;
    for (int r = 0; r < opt.rounds; ++r) {
        RoundRecord rec = run_round(st, cfg, agr, {}, nullptr, audit);

        TraceRow row;
        row.round = rec.round;
        double loss = 0.0, acc = 0.0;
        for (const auto& u : rec.updates) {
            loss += u.train_loss;
            acc += u.train_acc;
        }
        row.train_loss = loss / double(rec.updates.size());
        row.train_acc = acc / double(rec.updates.size());
        if (opt.targeted_probe)
            row.targeted_acc = accuracy(cfg.model, st.params, opt.targeted_probe->images,
                                        opt.targeted_probe->labels);
        if (opt.phi_mal) row.dist_phi_mal = model_distance(st.params, *opt.phi_mal);
        trace.push_back(row);

        if (opt.converge_eps > 0.0 && st.server_val.count() > 0) {
            recent.push_back(
                mean_loss(cfg.model, st.params, st.server_val.images, st.server_val.labels));
            if (int(recent.size()) > opt.converge_window + 1) recent.pop_front();
            if (int(recent.size()) == opt.converge_window + 1) {
                const auto [lo, hi] = std::minmax_element(recent.begin(), recent.end());
                if (*hi - *lo < opt.converge_eps) break;
            }
        }
    }
    return trace;
}

} // namespace fedlab
