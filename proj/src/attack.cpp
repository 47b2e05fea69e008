#include "fedlab/attack.hpp"

#include <algorithm>
#include <cmath>

namespace fedlab {

namespace {

// One full-batch gradient step on the crafted model, in place. Sign +1 ascends
// the loss, -1 descends. Buffers take the train-mode update either way.
GradientUpdate craft_step(const ModelSpec& spec, ParamVector& phi, const LabeledSet& data,
                          double lr, double sign) {
    GradientUpdate g = client_update(spec, phi, data, /*client_id=*/-1, /*round=*/-1);
    phi.trainable += sign * lr * g.values;
    phi.buffers += g.buffer_delta;
    return g;
}

LabeledSet relabel(const LabeledSet& s, int klass) {
    LabeledSet out = s;
    std::fill(out.labels.begin(), out.labels.end(), klass);
    return out;
}

MaliciousArtifact finish(const ParamVector& start, ParamVector phi,
                         std::vector<CraftRound> trace, LabeledSet synthesized) {
    MaliciousArtifact art;
    art.delta_poi = start.trainable - phi.trainable;
    art.phi_mal = std::move(phi);
    art.trace = std::move(trace);
    art.synthesized = std::move(synthesized);
    return art;
}

} // namespace

MaliciousArtifact craft_full_knowledge(const ParamVector& phi0, const ModelSpec& spec,
                                       const KnowledgeView& view, const AttackPlan& plan) {
    require(view.level == Knowledge::full, "craft_full_knowledge: view is not full knowledge");
    require(view.generator.has_value(), "craft_full_knowledge: view has no generator");
    require(plan.r_end >= 0, "craft: r_end must be >= 0");
    const Generator& gen = *view.generator;
    const int n = gen.spec.num_classes;
    require(plan.y_tar >= 0 && plan.y_tar < n, "craft: y_tar out of range");

    std::vector<LabeledSet> parts;
    for (int k = 0; k < n; ++k)
        if (k != plan.y_tar) parts.push_back(gen.sample(k, plan.craft_samples_per_class, 0xd0));
    LabeledSet d_main = concat(parts);
    LabeledSet d_trap = relabel(d_main, plan.y_tar);
    LabeledSet probe = gen.sample(plan.y_tar, plan.craft_samples_per_class, 0xbe);

    ParamVector phi = phi0;
    std::vector<CraftRound> trace;
    trace.reserve(std::size_t(plan.r_end));
    for (int r = 0; r < plan.r_end; ++r) {
        GradientUpdate g_main = craft_step(spec, phi, d_main, plan.alpha1, -1.0);
        craft_step(spec, phi, d_trap, plan.alpha2, +1.0);
        trace.push_back({mean_loss(spec, phi, probe.images, probe.labels), g_main.train_loss});
    }
    return finish(phi0, std::move(phi), std::move(trace), {});
}

MaliciousArtifact craft_semi_knowledge(const ParamVector& phi_g, const ModelSpec& spec,
                                       const KnowledgeView& view, const AttackPlan& plan) {
    require(view.level == Knowledge::semi, "craft_semi_knowledge: view is not semi knowledge");
    require(view.generator.has_value(), "craft_semi_knowledge: view has no generator");
    require(plan.r_end >= 0, "craft: r_end must be >= 0");
    const Generator& gen = *view.generator;
    require(gen.covers(plan.y_tar), "craft_semi_knowledge: generator does not cover y_tar");

    LabeledSet d_tar = gen.sample(plan.y_tar, plan.semi_samples_per_class, 0xd1);
    LabeledSet d_ben = filter_by_class(view.local, plan.y_tar, /*keep=*/false);
    require(d_ben.count() > 0, "craft_semi_knowledge: no non-target local data to repair with");

    ParamVector phi = phi_g;
    std::vector<CraftRound> trace;
    trace.reserve(std::size_t(plan.r_end));
    for (int r = 0; r < plan.r_end; ++r) {
        craft_step(spec, phi, d_tar, plan.alpha1, +1.0);
        GradientUpdate g_ben = craft_step(spec, phi, d_ben, plan.alpha2, -1.0);
        trace.push_back({mean_loss(spec, phi, d_tar.images, d_tar.labels), g_ben.train_loss});
    }
    return finish(phi_g, std::move(phi), std::move(trace), {});
}

Tensor deep_invert(const ParamVector& phi_g, const ModelSpec& spec, int y_tar, int count,
                   const AttackPlan& plan) {
    require(count > 0, "deep_invert: count must be positive");
    require(y_tar >= 0 && y_tar < spec.num_classes, "deep_invert: y_tar out of range");
    require(plan.p_end >= 0, "deep_invert: p_end must be >= 0");
    if (plan.lambda3 != 0.0 && spec.arch != Arch::convnet_bn)
        throw config_error("deep_invert: feature regularizer needs a model with "
                           "batch-norm buffers (set lambda3 = 0 for this arch)");

    const Shape shape = {Index(count), spec.in_c, spec.in_h, spec.in_w};
    Rng rng(derive_seed(plan.seed, {0xd1f7, std::uint64_t(y_tar)}));
    Vec x(shape_size(shape));
    for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform();
    const std::vector<int> labels(std::size_t(count), y_tar);

    for (int p = 0; p < plan.p_end; ++p) {
        Graph g;
        Var images = g.leaf(Tensor(x, shape));
        Var theta = g.constant(Tensor(phi_g.trainable, {phi_g.trainable.size()}));
        ForwardOut fw = model_forward(g, spec, theta, images, phi_g.buffers, BnMode::eval);

        Var obj = g.scale(cross_entropy(fw.logits, labels), plan.lambda0);
        if (plan.lambda1 != 0.0)
            obj = g.add(obj, g.scale(total_variation(images), plan.lambda1));
        if (plan.lambda2 != 0.0)
            obj = g.add(obj, g.scale(l2_norm(images, 1e-30), plan.lambda2));
        if (plan.lambda3 != 0.0) {
            // Match the batch statistics at each BN layer to the running
            // buffers of the trained model.
            std::size_t li = 0;
            Var feat = g.constant(0.0);
            for (const auto& e : phi_g.layout) {
                if (!e.buffer || e.name.find("running_mean") == std::string::npos) continue;
                require(li < fw.bn_batch_stats.size(), "deep_invert: layout/stat mismatch");
                const LayoutEntry& me = e;
                const LayoutEntry& ve = phi_g.entry(
                    e.name.substr(0, e.name.find("running_mean")) + "running_var");
                Var mu_ref = g.constant(Tensor(phi_g.buffers.segment(me.offset, me.size()),
                                               me.shape));
                Var var_ref = g.constant(Tensor(phi_g.buffers.segment(ve.offset, ve.size()),
                                                ve.shape));
                auto [mu, var] = fw.bn_batch_stats[li++];
                feat = g.add(feat, l2_norm(g.sub(mu, mu_ref), 1e-30));
                feat = g.add(feat, l2_norm(g.sub(var, var_ref), 1e-30));
            }
            require(li == fw.bn_batch_stats.size(), "deep_invert: unmatched BN stats");
            obj = g.add(obj, g.scale(feat, plan.lambda3));
        }

        Var gx = g.grad(obj, images);
        x -= plan.deep_lr * gx.val().values();
    }
    x = x.cwiseMax(0.0).cwiseMin(1.0);
    return Tensor(std::move(x), shape);
}

MaliciousArtifact craft_no_knowledge(const ParamVector& phi_g, const ModelSpec& spec,
                                     const KnowledgeView& view, const AttackPlan& plan) {
    require(view.level == Knowledge::none, "craft_no_knowledge: view is not no-knowledge");
    require(plan.r_end >= 0, "craft: r_end must be >= 0");
    require(view.local.count() > 0, "craft_no_knowledge: empty local set");

    LabeledSet d_tar;
    d_tar.images = deep_invert(phi_g, spec, plan.y_tar, plan.deep_count, plan);
    d_tar.labels.assign(std::size_t(plan.deep_count), plan.y_tar);
    const LabeledSet& d_loc = view.local; // target-free by the view's invariant

    ParamVector phi = phi_g;
    std::vector<CraftRound> trace;
    trace.reserve(std::size_t(plan.r_end));
    for (int r = 0; r < plan.r_end; ++r) {
        craft_step(spec, phi, d_tar, plan.alpha1, +1.0);
        GradientUpdate g_loc = craft_step(spec, phi, d_loc, plan.alpha2, -1.0);
        trace.push_back({mean_loss(spec, phi, d_tar.images, d_tar.labels), g_loc.train_loss});
    }
    return finish(phi_g, std::move(phi), std::move(trace), std::move(d_tar));
}

MaliciousArtifact craft(const ParamVector& phi_start, const ModelSpec& spec,
                        const KnowledgeView& view, const AttackPlan& plan) {
    switch (view.level) {
    case Knowledge::full: return craft_full_knowledge(phi_start, spec, view, plan);
    case Knowledge::semi: return craft_semi_knowledge(phi_start, spec, view, plan);
    case Knowledge::none: return craft_no_knowledge(phi_start, spec, view, plan);
    }
    throw contract_violation("craft: unknown knowledge level");
}

MixResult optimize_malicious_update(const ParamVector& prev, const ParamVector& cur,
                                    const ParamVector& phi_mal, const Vec& delta_ben,
                                    const AttackPlan& plan, double alpha) {
    require(plan.r_end >= 0, "optimize_malicious_update: r_end must be >= 0");
    const Vec delta_agr = recover_aggregate(prev, cur, alpha);
    require(delta_ben.size() == delta_agr.size(),
            "optimize_malicious_update: benign mean has the wrong size");
    require(cur.trainable.size() == phi_mal.trainable.size(),
            "optimize_malicious_update: crafted model has the wrong size");

    Vec delta_poi = cur.trainable - phi_mal.trainable;
    const double np = delta_poi.norm();
    require(np > 0.0, "optimize_malicious_update: delta_poi is zero; "
                      "the global model already equals the crafted one");
    const Vec u = delta_poi / np;
    const Vec& v = delta_ben;
    const Vec& w = delta_agr;

    // L(gamma, beta) = ||gamma*u + beta*v - w||. With u unit-norm the value and
    // both partials are closed forms in five dot products.
    const double uv = u.dot(v), vv = v.dot(v);
    const double uw = u.dot(w), vw = v.dot(w), ww = w.dot(w);
    auto l_dis = [&](double ga, double be) {
        double s = ga * ga + be * be * vv + ww + 2 * ga * be * uv - 2 * ga * uw - 2 * be * vw;
        return std::sqrt(std::max(s, 0.0));
    };

    double gamma = plan.gamma0, beta = plan.beta0;
    double cur_l = l_dis(gamma, beta);
    int steps = 0;
    for (; steps < plan.r_end; ++steps) {
        if (cur_l == 0.0) break;
        const double dg = (gamma + beta * uv - uw) / cur_l;
        const double db = (gamma * uv + beta * vv - vw) / cur_l;
        const double next_g = gamma - plan.opt_lr_gamma * dg;
        const double next_b = beta - plan.opt_lr_beta * db;
        const double next_l = l_dis(next_g, next_b);
        gamma = next_g;
        beta = next_b;
        const double moved = std::abs(cur_l - next_l);
        cur_l = next_l;
        if (moved < plan.mix_stop_eps) {
            ++steps;
            break;
        }
    }

    MixResult res;
    res.gamma = gamma;
    res.beta = beta;
    res.l_dis = cur_l;
    res.delta_m = gamma * u + beta * v;
    res.steps_used = steps;
    return res;
}

CampaignReport run_poisoning_campaign(FlState& st, const FlConfig& cfg, const AgrConfig& agr,
                                      const ParamVector& phi_mal,
                                      const std::vector<int>& malicious_ids,
                                      const AttackPlan& plan, AuditLog* audit) {
    require(!malicious_ids.empty(), "campaign: need at least one malicious client");
    require(plan.campaign_rounds >= 1, "campaign: need at least one round");
    require(plan.replacement_tolerance > 0.0, "campaign: tolerance must be positive");
    for (int id : malicious_ids)
        require(id >= 0 && id < cfg.n_clients, "campaign: malicious id out of range");
    check_params(cfg.model, phi_mal);

    CampaignReport rep;
    rep.initial_distance = model_distance(st.params, phi_mal);
    rep.tolerance = plan.tolerance_is_relative
                        ? plan.replacement_tolerance * rep.initial_distance
                        : plan.replacement_tolerance;

    std::optional<RoundRecord> last;
    for (int r = 0; r < plan.campaign_rounds; ++r) {
        // Malicious clients run honest-looking local steps first; their mean is
        // the camouflage component and supplies the buffer delta.
        Vec delta_ben = Vec::Zero(st.params.trainable.size());
        Vec buf_ben = Vec::Zero(st.params.buffers.size());
        double probe_loss = 0.0, probe_acc = 0.0;
        for (int id : malicious_ids) {
            Rng rng(derive_seed(cfg.seed, {0x3a11, std::uint64_t(st.round),
                                           std::uint64_t(id)}));
            LabeledSet batch = sample_batch(st.shards.at(std::size_t(id)), cfg.batch, rng);
            GradientUpdate g = client_update(cfg.model, st.params, batch, id, st.round);
            delta_ben += g.values;
            buf_ben += g.buffer_delta;
            probe_loss += g.train_loss;
            probe_acc += g.train_acc;
        }
        const double inv = 1.0 / double(malicious_ids.size());
        delta_ben *= inv;
        buf_ben *= inv;

        // The recovered previous aggregate anchors the mix; before any round
        // has run, pretend the last aggregate was the benign mean itself.
        ParamVector prev, cur;
        if (last) {
            prev = last->before;
            cur = last->after;
        } else {
            cur = st.params;
            prev = cur;
            prev.trainable += cfg.alpha * delta_ben;
        }
        MixResult mix = optimize_malicious_update(prev, cur, phi_mal, delta_ben, plan,
                                                  cfg.alpha);

        // Every malicious client submits the identical mixed update.
        std::map<int, GradientUpdate> overrides;
        for (int id : malicious_ids) {
            GradientUpdate g;
            g.client_id = id;
            g.round = st.round;
            g.values = mix.delta_m;
            g.buffer_delta = buf_ben;
            g.train_loss = probe_loss * inv;
            g.train_acc = probe_acc * inv;
            overrides[id] = g;
        }
        RoundRecord rec = run_round(st, cfg, agr, overrides, nullptr, audit);

        CampaignRow row;
        row.round = rec.round;
        row.gamma = mix.gamma;
        row.beta = mix.beta;
        row.l_dis = mix.l_dis;
        row.distance = model_distance(st.params, phi_mal);
        row.accepted = std::any_of(malicious_ids.begin(), malicious_ids.end(), [&](int id) {
            return std::find(rec.agg.selected.begin(), rec.agg.selected.end(), id) !=
                   rec.agg.selected.end();
        });
        rep.rows.push_back(row);
        rep.rounds_used = r + 1;
        last = std::move(rec);

        if (row.distance <= rep.tolerance) {
            rep.success = true;
            break;
        }
    }
    rep.final_distance = rep.rows.empty() ? rep.initial_distance : rep.rows.back().distance;
    return rep;
}

} // namespace fedlab
