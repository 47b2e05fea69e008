#include "fedlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedlab {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

Vec clip01(Vec v) {
    return v.array().max(0.0).min(1.0).matrix();
}

} // namespace

void check_set(const LabeledSet& s, int num_classes) {
    require(s.images.rank() == 4, "dataset: images must be [M,C,H,W]");
    require(s.images.dim(0) == Index(s.labels.size()), "dataset: image/label count mismatch");
    for (int l : s.labels)
        require(l >= 0 && l < num_classes, "dataset: label out of range");
    const Vec& v = s.images.values();
    require((v.array() >= 0.0).all() && (v.array() <= 1.0).all(),
            "dataset: pixel outside [0,1]");
}

Tensor class_prototype(const DataSpec& spec, int klass) {
    require(klass >= 0 && klass < spec.num_classes, "prototype: class out of range");
    Rng rng(derive_seed(spec.seed, {0x9a77u, std::uint64_t(klass)}));

    // Two low-frequency waves per channel: one axis-aligned product term and
    // one oriented ridge. Frequencies stay at 1..3 periods across the image so
    // the patterns are smooth; high wave contrast keeps classes separable even
    // through small-batch normalization noise. Extremes clip at the [0,1] rail.
    const double f1 = 1.0 + rng.below(3);
    const double f2 = 1.0 + rng.below(3);
    const double g1 = 1.0 + rng.below(3);
    const double theta = rng.uniform(0.0, kTau);
    const double p1 = rng.uniform(0.0, kTau);
    const double p2 = rng.uniform(0.0, kTau);
    const double p3 = rng.uniform(0.0, kTau);
    const double base = 0.30 + 0.4 * rng.uniform();

    Vec v(spec.c * spec.h * spec.w);
    Index i = 0;
    for (Index ch = 0; ch < spec.c; ++ch) {
        const double chp = kTau * double(ch) / double(spec.c);
        for (Index y = 0; y < spec.h; ++y)
            for (Index x = 0; x < spec.w; ++x) {
                const double u = (double(y) + 0.5) / double(spec.h);
                const double t = (double(x) + 0.5) / double(spec.w);
                const double wave =
                    std::sin(kTau * f1 * u + p1 + chp) * std::sin(kTau * f2 * t + p2);
                const double ridge =
                    std::sin(kTau * g1 * (u * std::cos(theta) + t * std::sin(theta)) + p3);
                v[i++] = base + 0.28 * wave + 0.18 * ridge;
            }
    }
    return Tensor(clip01(std::move(v)), {spec.c, spec.h, spec.w});
}

LabeledSet sample_class(const DataSpec& spec, int klass, int count, Rng& rng) {
    require(count > 0, "sample_class: count must be positive");
    const Tensor proto = class_prototype(spec, klass);
    const Index px = proto.size();
    Vec v(Index(count) * px);
    for (Index s = 0; s < count; ++s)
        for (Index i = 0; i < px; ++i)
            v[s * px + i] = proto[i] + rng.normal(0.0, spec.noise_std);
    LabeledSet out{Tensor(clip01(std::move(v)), {Index(count), spec.c, spec.h, spec.w}),
                   std::vector<int>(std::size_t(count), klass)};
    return out;
}

LabeledSet gen_dataset(const DataSpec& spec) {
    require(spec.num_classes >= 2, "gen_dataset: need at least two classes");
    require(spec.samples_per_class > 0, "gen_dataset: need at least one sample per class");
    std::vector<LabeledSet> parts;
    parts.reserve(std::size_t(spec.num_classes));
    for (int k = 0; k < spec.num_classes; ++k) {
        Rng rng(derive_seed(spec.seed, {0xda7au, std::uint64_t(k)}));
        parts.push_back(sample_class(spec, k, spec.samples_per_class, rng));
    }
    LabeledSet out = concat(parts);
    check_set(out, spec.num_classes);
    return out;
}

LabeledSet concat(const std::vector<LabeledSet>& parts) {
    require(!parts.empty(), "concat: no parts");
    Shape item = parts[0].images.shape();
    item[0] = 0;
    Index total = 0, px = 1;
    for (std::size_t i = 1; i < item.size(); ++i) px *= item[i];
    for (const auto& p : parts) total += p.count();
    require(total > 0, "concat: empty result");

    Vec v(total * px);
    std::vector<int> labels;
    labels.reserve(std::size_t(total));
    Index off = 0;
    for (const auto& p : parts) {
        if (p.count() == 0) continue;
        require(p.images.dim(1) * p.images.dim(2) * p.images.dim(3) == px,
                "concat: item shape mismatch");
        v.segment(off, p.images.size()) = p.images.values();
        off += p.images.size();
        labels.insert(labels.end(), p.labels.begin(), p.labels.end());
    }
    item[0] = total;
    return {Tensor(std::move(v), std::move(item)), std::move(labels)};
}

LabeledSet subset(const LabeledSet& s, const std::vector<Index>& idx) {
    require(!idx.empty(), "subset: empty index list");
    const Index px = s.images.size() / std::max<Index>(s.count(), 1);
    Vec v(Index(idx.size()) * px);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < s.count(), "subset: index out of range");
        v.segment(Index(i) * px, px) = s.images.values().segment(idx[i] * px, px);
        labels.push_back(s.labels[std::size_t(idx[i])]);
    }
    Shape shape = s.images.shape();
    shape[0] = Index(idx.size());
    return {Tensor(std::move(v), std::move(shape)), std::move(labels)};
}

LabeledSet filter_by_class(const LabeledSet& s, int klass, bool keep) {
    std::vector<Index> idx;
    for (Index i = 0; i < s.count(); ++i)
        if ((s.labels[std::size_t(i)] == klass) == keep) idx.push_back(i);
    require(!idx.empty(), "filter_by_class: nothing left after filtering");
    return subset(s, idx);
}

std::vector<LabeledSet> partition_iid(const LabeledSet& full, int n_clients,
                                      std::uint64_t seed) {
    require(n_clients > 0, "partition: need at least one client");
    require(full.count() >= n_clients, "partition: fewer samples than clients");

    std::vector<Index> order(std::size_t(full.count()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {0x9a27u}));
    rng.shuffle(order);

    const Index base = full.count() / n_clients;
    const Index rem = full.count() % n_clients;
    std::vector<LabeledSet> shards;
    shards.reserve(std::size_t(n_clients));
    std::size_t pos = 0;
    for (int i = 0; i < n_clients; ++i) {
        const Index take = base + (Index(i) < rem ? 1 : 0);
        std::vector<Index> idx(order.begin() + long(pos), order.begin() + long(pos + take));
        pos += std::size_t(take);
        shards.push_back(subset(full, idx));
    }
    return shards;
}

bool Generator::covers(int klass) const {
    return std::find(classes.begin(), classes.end(), klass) != classes.end();
}

LabeledSet Generator::sample(int klass, int count, std::uint64_t stream) const {
    require(covers(klass), "generator: class not covered at this knowledge level");
    Rng rng(derive_seed(spec.seed, {0x6e4au, std::uint64_t(klass), stream}));
    return sample_class(spec, klass, count, rng);
}

KnowledgeView make_knowledge_view(Knowledge level, const DataSpec& spec, int target_class,
                                  const std::vector<LabeledSet>& local_shards,
                                  double semi_fraction, std::uint64_t seed) {
    require(target_class >= 0 && target_class < spec.num_classes,
            "knowledge: target class out of range");
    require(!local_shards.empty(), "knowledge: adversary controls no clients");
    require(semi_fraction >= 0.0 && semi_fraction <= 1.0,
            "knowledge: semi fraction must be in [0,1]");

    KnowledgeView view;
    view.level = level;
    view.target_class = target_class;
    view.local = concat(local_shards);

    if (level == Knowledge::full) {
        Generator gen{spec, {}};
        for (int k = 0; k < spec.num_classes; ++k) gen.classes.push_back(k);
        view.generator = std::move(gen);
    } else if (level == Knowledge::semi) {
        std::vector<int> others;
        for (int k = 0; k < spec.num_classes; ++k)
            if (k != target_class) others.push_back(k);
        Rng rng(derive_seed(seed, {0x5e31u, std::uint64_t(target_class)}));
        rng.shuffle(others);
        const std::size_t keep = std::size_t(semi_fraction * double(others.size()));
        others.resize(keep);
        std::sort(others.begin(), others.end());

        Generator gen{spec, {target_class}};
        gen.classes.insert(gen.classes.end(), others.begin(), others.end());
        view.generator = std::move(gen);
    } else {
        // No generator, and the local set must not leak target-class samples.
        bool has_other = false;
        for (int l : view.local.labels) has_other |= (l != target_class);
        require(has_other, "knowledge: local shards hold only target-class samples");
        view.local = filter_by_class(view.local, target_class, false);
    }
    return view;
}

} // namespace fedlab
