#pragma once

// Synthetic labeled image data and its federation-side plumbing: class
// prototypes with additive noise, IID partitioning across clients, and the
// three adversary knowledge views (what the attacker can sample or hold
// locally when crafting).

#include "fedlab/rng.hpp"
#include "fedlab/tensor.hpp"

#include <optional>
#include <vector>

namespace fedlab {

struct DataSpec {
    int num_classes = 10;
    Index c = 1, h = 16, w = 16;
    int samples_per_class = 20;
    double noise_std = 0.05;
    std::uint64_t seed = 1;
};

struct LabeledSet {
    Tensor images; // [M, C, H, W], values in [0, 1]
    std::vector<int> labels;

    Index count() const { return labels.empty() ? 0 : images.dim(0); }
};

void check_set(const LabeledSet& s, int num_classes);

// Deterministic low-frequency pattern for one class, in [0, 1]. Classes get
// distinct frequency/phase draws from the seed.
Tensor class_prototype(const DataSpec& spec, int klass);

// Prototype plus pixel noise, clipped back to [0, 1].
LabeledSet sample_class(const DataSpec& spec, int klass, int count, Rng& rng);

// samples_per_class draws for every class, in class order.
LabeledSet gen_dataset(const DataSpec& spec);

LabeledSet concat(const std::vector<LabeledSet>& parts);
LabeledSet subset(const LabeledSet& s, const std::vector<Index>& idx);
LabeledSet filter_by_class(const LabeledSet& s, int klass, bool keep);

// Shuffle and deal into n near-equal shards (earlier shards take the
// remainder). Every sample lands in exactly one shard.
std::vector<LabeledSet> partition_iid(const LabeledSet& full, int n_clients,
                                      std::uint64_t seed);

enum class Knowledge { full, semi, none };

// A distribution handle the adversary may sample from: the data spec plus the
// classes it is allowed to draw.
struct Generator {
    DataSpec spec;
    std::vector<int> classes;

    bool covers(int klass) const;
    // Deterministic in (spec.seed, klass, stream) and independent of the
    // training draws.
    LabeledSet sample(int klass, int count, std::uint64_t stream) const;
};

struct KnowledgeView {
    Knowledge level = Knowledge::full;
    int target_class = 0;
    std::optional<Generator> generator; // absent at level none
    LabeledSet local;                   // the adversary's own shards
};

// full: generator over all classes. semi: generator over the target class
// plus floor(fraction * (n-1)) other classes, chosen by seeded shuffle.
// none: no generator, and every target-class sample is removed from the
// local set. local_shards are the malicious clients' own data.
KnowledgeView make_knowledge_view(Knowledge level, const DataSpec& spec, int target_class,
                                  const std::vector<LabeledSet>& local_shards,
                                  double semi_fraction = 0.5, std::uint64_t seed = 0);

} // namespace fedlab
