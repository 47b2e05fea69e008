#include "fedlab/agr.hpp"

#include "fedlab/fl.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fedlab {

namespace {

// Indices of `updates` sorted by client id; all selection logic runs in this
// order so "lowest index" tie-breaks mean lowest client id.
std::vector<int> order_by_client(const std::vector<GradientUpdate>& updates) {
    std::vector<int> order(updates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return updates[std::size_t(a)].client_id < updates[std::size_t(b)].client_id;
    });
    for (std::size_t i = 1; i < order.size(); ++i)
        require(updates[std::size_t(order[i])].client_id !=
                    updates[std::size_t(order[i - 1])].client_id,
                "aggregate: duplicate client id");
    return order;
}

Vec mean_of(const std::vector<GradientUpdate>& updates, const std::vector<int>& idx,
            bool buffers) {
    require(!idx.empty(), "aggregate: empty mean");
    const Vec& first =
        buffers ? updates[std::size_t(idx[0])].buffer_delta : updates[std::size_t(idx[0])].values;
    Vec acc = Vec::Zero(first.size());
    for (int i : idx) acc += buffers ? updates[std::size_t(i)].buffer_delta
                                     : updates[std::size_t(i)].values;
    return acc / double(idx.size());
}

// Iterative Krum selection over client-ordered positions. At every iteration
// each remaining update is scored by the summed squared distances to its
// min(r-1, N-m-2) nearest remaining peers (N = initial count); the minimum
// score wins, ties to the lowest client id.
std::vector<int> krum_select(const std::vector<GradientUpdate>& updates,
                             const std::vector<int>& order, int m, int count) {
    const int n = int(order.size());
    std::vector<std::vector<double>> d2(std::size_t(n), std::vector<double>(std::size_t(n), 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = (updates[std::size_t(order[std::size_t(i)])].values -
                              updates[std::size_t(order[std::size_t(j)])].values)
                                 .squaredNorm();
            d2[std::size_t(i)][std::size_t(j)] = d;
            d2[std::size_t(j)][std::size_t(i)] = d;
        }

    std::vector<int> active(std::size_t(n), 0);
    std::iota(active.begin(), active.end(), 0);
    std::vector<int> picked;
    while (int(picked.size()) < count) {
        const int r = int(active.size());
        const int k = std::min(r - 1, n - m - 2);
        int best = -1;
        double best_score = 0.0;
        for (int i : active) {
            std::vector<double> row;
            row.reserve(std::size_t(r - 1));
            for (int j : active)
                if (j != i) row.push_back(d2[std::size_t(i)][std::size_t(j)]);
            std::sort(row.begin(), row.end());
            double score = 0.0;
            for (int t = 0; t < k; ++t) score += row[std::size_t(t)];
            if (best < 0 || score < best_score) {
                best = i;
                best_score = score;
            }
        }
        picked.push_back(best);
        active.erase(std::find(active.begin(), active.end(), best));
    }
    return picked; // positions into `order`
}

double median_sorted(const std::vector<double>& v) {
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ValScore {
    double loss = 0.0;
    double err = 0.0;
    bool operator<(const ValScore& o) const {
        return loss != o.loss ? loss < o.loss : err < o.err;
    }
};

ValScore fang_score(const AgrContext& ctx, const Vec& agg) {
    const ParamVector trial = server_step(
        *ctx.params, agg, Vec::Zero(ctx.params->buffers.size()), ctx.alpha);
    ValScore s;
    s.loss = mean_loss(*ctx.spec, trial, ctx.validation->images, ctx.validation->labels);
    s.err = 1.0 - accuracy(*ctx.spec, trial, ctx.validation->images, ctx.validation->labels);
    return s;
}

} // namespace

const char* agr_rule_name(AgrRule r) {
    switch (r) {
        case AgrRule::mean: return "mean";
        case AgrRule::multi_krum: return "multi-krum";
        case AgrRule::bulyan: return "bulyan";
        case AgrRule::trimmed_mean: return "trimmed-mean";
        case AgrRule::median: return "median";
        case AgrRule::afa: return "afa";
        case AgrRule::fang: return "fang";
    }
    return "?";
}

AgrRule agr_rule_from_name(const std::string& name) {
    for (AgrRule r : {AgrRule::mean, AgrRule::multi_krum, AgrRule::bulyan,
                      AgrRule::trimmed_mean, AgrRule::median, AgrRule::afa, AgrRule::fang})
        if (name == agr_rule_name(r)) return r;
    throw config_error("unknown aggregation rule: " + name);
}

AggregateResult aggregate(const AgrConfig& cfg, const std::vector<GradientUpdate>& updates,
                          const AgrContext* ctx) {
    require(!updates.empty(), "aggregate: no updates");
    const int n = int(updates.size());
    const Index dim = updates[0].values.size();
    const Index bdim = updates[0].buffer_delta.size();
    for (const auto& u : updates)
        require(u.values.size() == dim && u.buffer_delta.size() == bdim,
                "aggregate: update size mismatch");
    require(cfg.m >= 0, "aggregate: m must be non-negative");

    const std::vector<int> order = order_by_client(updates);
    auto ids_of = [&](const std::vector<int>& pos) {
        std::vector<int> ids;
        ids.reserve(pos.size());
        for (int p : pos) ids.push_back(updates[std::size_t(order[std::size_t(p)])].client_id);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    auto idx_of_positions = [&](const std::vector<int>& pos) {
        std::vector<int> idx;
        idx.reserve(pos.size());
        for (int p : pos) idx.push_back(order[std::size_t(p)]);
        return idx;
    };
    auto all_positions = [&]() {
        std::vector<int> pos(std::size_t(n), 0);
        std::iota(pos.begin(), pos.end(), 0);
        return pos;
    };

    AggregateResult res;

    switch (cfg.rule) {
        case AgrRule::mean: {
            res.values = mean_of(updates, idx_of_positions(all_positions()), false);
            res.selected = ids_of(all_positions());
            break;
        }

        case AgrRule::multi_krum: {
            if (n <= 2 * cfg.m + 2)
                throw config_error("multi-krum: needs more than 2m+2 updates");
            const int c = std::max(1, n - 2 * cfg.m - 3);
            const std::vector<int> picked = krum_select(updates, order, cfg.m, c);
            res.values = mean_of(updates, idx_of_positions(picked), false);
            res.selected = ids_of(picked);
            break;
        }

        case AgrRule::bulyan: {
            if (n < 4 * cfg.m + 3)
                throw config_error("bulyan: needs at least 4m+3 updates");
            const int c1 = n - 2 * cfg.m;
            const int c2 = c1 - 2 * cfg.m;
            const std::vector<int> stage1 = krum_select(updates, order, cfg.m, c1);
            const std::vector<int> idx = idx_of_positions(stage1);

            res.values = Vec::Zero(dim);
            std::vector<double> col(std::size_t(c1), 0.0);
            std::vector<double> sorted_col(std::size_t(c1), 0.0);
            for (Index d = 0; d < dim; ++d) {
                for (std::size_t i = 0; i < idx.size(); ++i)
                    col[i] = updates[std::size_t(idx[i])].values[d];
                sorted_col = col;
                std::sort(sorted_col.begin(), sorted_col.end());
                const double med = median_sorted(sorted_col);
                // c2 values closest to the coordinate median; ties keep the
                // smaller value.
                std::sort(sorted_col.begin(), sorted_col.end(), [&](double a, double b) {
                    const double da = std::abs(a - med), db = std::abs(b - med);
                    return da != db ? da < db : a < b;
                });
                double acc = 0.0;
                for (int t = 0; t < c2; ++t) acc += sorted_col[std::size_t(t)];
                res.values[d] = acc / double(c2);
            }
            res.selected = ids_of(stage1);
            break;
        }

        case AgrRule::trimmed_mean: {
            if (n <= 2 * cfg.m)
                throw config_error("trimmed-mean: needs more than 2m updates");
            res.values = Vec::Zero(dim);
            std::vector<double> col(std::size_t(n), 0.0);
            for (Index d = 0; d < dim; ++d) {
                for (int i = 0; i < n; ++i) col[std::size_t(i)] = updates[std::size_t(i)].values[d];
                std::sort(col.begin(), col.end());
                double acc = 0.0;
                for (int i = cfg.m; i < n - cfg.m; ++i) acc += col[std::size_t(i)];
                res.values[d] = acc / double(n - 2 * cfg.m);
            }
            res.selected = ids_of(all_positions());
            res.note = "coordinate-wise";
            break;
        }

        case AgrRule::median: {
            res.values = Vec::Zero(dim);
            std::vector<double> col(std::size_t(n), 0.0);
            for (Index d = 0; d < dim; ++d) {
                for (int i = 0; i < n; ++i) col[std::size_t(i)] = updates[std::size_t(i)].values[d];
                std::sort(col.begin(), col.end());
                res.values[d] = median_sorted(col);
            }
            res.selected = ids_of(all_positions());
            res.note = "coordinate-wise";
            break;
        }

        case AgrRule::afa: {
            require(ctx && ctx->spec && ctx->params && ctx->validation &&
                        ctx->validation->count() > 0,
                    "afa: needs server context with a validation set");
            const GradientUpdate ref =
                client_update(*ctx->spec, *ctx->params, *ctx->validation, -1, 0);
            const double ref_norm = ref.values.norm();
            if (ref_norm == 0.0) {
                warn("afa: zero reference gradient, falling back to plain mean");
                res.values = mean_of(updates, idx_of_positions(all_positions()), false);
                res.selected = ids_of(all_positions());
                res.note = "reference-zero-fallback";
                break;
            }

            std::vector<int> kept_pos;
            std::vector<double> kept_sim;
            for (int p = 0; p < n; ++p) {
                const Vec& v = updates[std::size_t(order[std::size_t(p)])].values;
                const double vn = v.norm();
                const double sim = vn == 0.0 ? 0.0 : v.dot(ref.values) / (vn * ref_norm);
                if (sim > 0.0) {
                    kept_pos.push_back(p);
                    kept_sim.push_back(sim);
                }
            }
            if (kept_pos.empty()) {
                // Nothing aligned with the server's own gradient: apply the
                // reference itself so the round still makes progress.
                warn("afa: all updates rejected, applying the reference gradient");
                res.values = ref.values;
                res.selected = {};
                res.rejected = ids_of(all_positions());
                res.note = "all-rejected-reference-step";
                res.buffer_delta = mean_of(updates, idx_of_positions(all_positions()), true);
                return res;
            }

            const double sim_sum = std::accumulate(kept_sim.begin(), kept_sim.end(), 0.0);
            res.values = Vec::Zero(dim);
            for (std::size_t i = 0; i < kept_pos.size(); ++i) {
                const Vec& v = updates[std::size_t(order[std::size_t(kept_pos[i])])].values;
                const double w = kept_sim[i] / sim_sum;
                const double rescale =
                    cfg.afa_normalize ? (v.norm() == 0.0 ? 0.0 : ref_norm / v.norm()) : 1.0;
                res.values += w * rescale * v;
                res.weights.push_back(w);
            }
            res.selected = ids_of(kept_pos);
            std::vector<int> rej;
            for (int p = 0; p < n; ++p)
                if (std::find(kept_pos.begin(), kept_pos.end(), p) == kept_pos.end())
                    rej.push_back(p);
            res.rejected = ids_of(rej);
            break;
        }

        case AgrRule::fang: {
            require(ctx && ctx->spec && ctx->params && ctx->validation &&
                        ctx->validation->count() > 0,
                    "fang: needs server context with a validation set");
            if (cfg.fang_base == AgrRule::fang)
                throw config_error("fang: base rule cannot be fang itself");
            if (n <= cfg.m) throw config_error("fang: cannot reject every update");

            AgrConfig base = cfg;
            base.rule = cfg.fang_base;

            std::vector<int> keep = all_positions();
            if (cfg.m > 0) {
                // Score each leave-one-out aggregation; the updates whose
                // removal improves (loss, err) most are the suspects.
                std::vector<std::pair<ValScore, int>> by_removal;
                for (int p = 0; p < n; ++p) {
                    std::vector<GradientUpdate> rest;
                    rest.reserve(std::size_t(n - 1));
                    for (int q = 0; q < n; ++q)
                        if (q != p) rest.push_back(updates[std::size_t(order[std::size_t(q)])]);
                    const AggregateResult sub = aggregate(base, rest, ctx);
                    by_removal.emplace_back(fang_score(*ctx, sub.values), p);
                }
                std::stable_sort(by_removal.begin(), by_removal.end(),
                                 [](const auto& a, const auto& b) {
                                     if (a.first < b.first) return true;
                                     if (b.first < a.first) return false;
                                     return a.second < b.second;
                                 });
                std::vector<int> reject_pos;
                for (int t = 0; t < cfg.m; ++t) reject_pos.push_back(by_removal[std::size_t(t)].second);
                keep.clear();
                for (int p = 0; p < n; ++p)
                    if (std::find(reject_pos.begin(), reject_pos.end(), p) == reject_pos.end())
                        keep.push_back(p);
                res.rejected = ids_of(reject_pos);
            }

            std::vector<GradientUpdate> survivors;
            for (int p : keep) survivors.push_back(updates[std::size_t(order[std::size_t(p)])]);
            const AggregateResult final_agg = aggregate(base, survivors, ctx);
            res.values = final_agg.values;
            res.selected = ids_of(keep);
            res.note = std::string("base=") + agr_rule_name(cfg.fang_base);
            break;
        }
    }

    const std::vector<int>& for_buffers = res.selected.empty() ? res.rejected : res.selected;
    std::vector<int> bidx;
    for (int i = 0; i < n; ++i) {
        const int id = updates[std::size_t(i)].client_id;
        if (std::find(for_buffers.begin(), for_buffers.end(), id) != for_buffers.end())
            bidx.push_back(i);
    }
    res.buffer_delta = mean_of(updates, bidx, true);
    return res;
}

// -- audit --------------------------------------------------------------------

std::string audit_line(const AgrConfig& cfg, int round, const AggregateResult& res) {
    nlohmann::ordered_json j;
    j["rule"] = agr_rule_name(cfg.rule);
    j["m"] = cfg.m;
    j["round"] = round;
    j["selected"] = res.selected;
    j["rejected"] = res.rejected;
    j["weights"] = res.weights;
    if (!res.note.empty()) j["note"] = res.note;
    return j.dump();
}

struct AuditLog::Impl {
    std::ofstream out;
};

AuditLog::AuditLog(const std::string& path) : impl_(new Impl) {
    impl_->out.open(path, std::ios::out | std::ios::app);
    if (!impl_->out) throw input_error("audit: cannot open " + path);
}

AuditLog::~AuditLog() = default;

void AuditLog::record(const AgrConfig& cfg, int round, const AggregateResult& res) {
    impl_->out << audit_line(cfg, round, res) << '\n';
    impl_->out.flush();
}

} // namespace fedlab
