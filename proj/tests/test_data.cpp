#include <doctest.h>

#include "fedlab/data.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <map>
#include <set>

using namespace fedlab;

namespace {

DataSpec small_spec() {
    DataSpec ds;
    ds.num_classes = 4;
    ds.c = 1;
    ds.h = 5;
    ds.w = 5;
    ds.samples_per_class = 6;
    ds.noise_std = 0.05;
    ds.seed = 77;
    return ds;
}

// sorted (label, pixel-bytes) multiset fingerprint for set-equality checks
std::multiset<std::pair<int, std::string>> fingerprint(const LabeledSet& s) {
    std::multiset<std::pair<int, std::string>> out;
    const Index px = s.images.size() / std::max<Index>(1, s.count());
    for (Index i = 0; i < s.count(); ++i) {
        std::string key(reinterpret_cast<const char*>(s.images.values().data() + i * px),
                        std::size_t(px) * sizeof(double));
        out.emplace(s.labels[std::size_t(i)], std::move(key));
    }
    return out;
}

} // namespace

TEST_CASE("gen_dataset is deterministic and respects counts, range, labels") {
    const DataSpec ds = small_spec();
    const LabeledSet a = gen_dataset(ds), b = gen_dataset(ds);
    CHECK(a.count() == ds.num_classes * ds.samples_per_class);
    CHECK((a.images.values() - b.images.values()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.labels == b.labels);

    CHECK(a.images.values().minCoeff() >= 0.0);
    CHECK(a.images.values().maxCoeff() <= 1.0);

    std::map<int, int> hist;
    for (int y : a.labels) ++hist[y];
    CHECK(hist.size() == std::size_t(ds.num_classes));
    for (const auto& [klass, n] : hist) {
        CHECK(klass >= 0);
        CHECK(klass < ds.num_classes);
        CHECK(n == ds.samples_per_class);
    }
    check_set(a, ds.num_classes); // must not throw

    DataSpec other = ds;
    other.seed = 78;
    const LabeledSet c = gen_dataset(other);
    CHECK((a.images.values() - c.images.values()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero noise collapses every sample onto its class prototype") {
    DataSpec ds = small_spec();
    ds.noise_std = 0.0;
    const LabeledSet s = gen_dataset(ds);
    const Index px = ds.c * ds.h * ds.w;
    for (Index i = 0; i < s.count(); ++i) {
        const Tensor proto = class_prototype(ds, s.labels[std::size_t(i)]);
        const Vec got = s.images.values().segment(i * px, px);
        CHECK((got - proto.values()).cwiseAbs().maxCoeff() == 0.0);
    }
    // prototypes of distinct classes differ
    CHECK((class_prototype(ds, 0).values() - class_prototype(ds, 1).values())
              .cwiseAbs()
              .maxCoeff() > 0.0);
}

TEST_CASE("partition deals every sample exactly once into near-equal shards") {
    const DataSpec ds = small_spec();
    const LabeledSet full = gen_dataset(ds); // 24 samples

    SUBCASE("one client gets a permutation of the whole set") {
        const auto shards = partition_iid(full, 1, 9);
        REQUIRE(shards.size() == 1);
        CHECK(shards[0].count() == full.count());
        CHECK(fingerprint(shards[0]) == fingerprint(full));
    }
    SUBCASE("24 over 8 gives 3 each and the union restores the multiset") {
        const auto shards = partition_iid(full, 8, 9);
        REQUIRE(shards.size() == 8);
        for (const auto& sh : shards) CHECK(sh.count() == 3);
        CHECK(fingerprint(concat(shards)) == fingerprint(full));
    }
    SUBCASE("uneven split hands the remainder to the earliest shards") {
        const auto shards = partition_iid(full, 5, 9); // 24 = 5+5+5+5+4
        REQUIRE(shards.size() == 5);
        CHECK(shards[0].count() == 5);
        CHECK(shards[4].count() == 4);
        CHECK(fingerprint(concat(shards)) == fingerprint(full));
    }
    SUBCASE("deterministic in the seed") {
        const auto s1 = partition_iid(full, 4, 9), s2 = partition_iid(full, 4, 9);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK((s1[i].images.values() - s2[i].images.values()).cwiseAbs().maxCoeff() ==
                  0.0);
    }
    SUBCASE("more clients than samples is rejected") {
        CHECK_THROWS(partition_iid(full, int(full.count()) + 1, 9));
    }
}

TEST_CASE("subset and filter_by_class behave like their names") {
    const DataSpec ds = small_spec();
    const LabeledSet full = gen_dataset(ds);

    const LabeledSet keep = filter_by_class(full, 2, true);
    CHECK(keep.count() == ds.samples_per_class);
    for (int y : keep.labels) CHECK(y == 2);

    const LabeledSet drop = filter_by_class(full, 2, false);
    CHECK(drop.count() == full.count() - ds.samples_per_class);
    for (int y : drop.labels) CHECK(y != 2);

    const LabeledSet pair = subset(full, {0, 7});
    CHECK(pair.count() == 2);
    CHECK(pair.labels[0] == full.labels[0]);
    CHECK(pair.labels[1] == full.labels[7]);

    CHECK_THROWS(subset(full, {full.count()}));      // out of range
    CHECK_THROWS(filter_by_class(full, 99, true));   // empty result
}

TEST_CASE("knowledge views expose exactly the promised classes") {
    DataSpec ds = small_spec();
    ds.num_classes = 10;
    const LabeledSet full = gen_dataset(ds);
    const auto shards = partition_iid(full, 8, 9);
    const std::vector<LabeledSet> local{shards[0], shards[1]};
    const int y_tar = 3;

    const KnowledgeView kf = make_knowledge_view(Knowledge::full, ds, y_tar, local);
    const KnowledgeView ks = make_knowledge_view(Knowledge::semi, ds, y_tar, local);
    const KnowledgeView kn = make_knowledge_view(Knowledge::none, ds, y_tar, local);

    REQUIRE(kf.generator.has_value());
    for (int k = 0; k < ds.num_classes; ++k) CHECK(kf.generator->covers(k));

    // semi with fraction 0.5 over 10 classes: target plus floor(0.5*9) = 4
    REQUIRE(ks.generator.has_value());
    CHECK(ks.generator->classes.size() == 5);
    CHECK(ks.generator->covers(y_tar));

    CHECK(!kn.generator.has_value());
    for (int y : kn.local.labels) CHECK(y != y_tar);
    // everything else from the shards survives
    Index others = 0;
    for (const auto& sh : local)
        others += filter_by_class(sh, y_tar, false).count();
    CHECK(kn.local.count() == others);

    // full and semi keep the local shards untouched
    CHECK(kf.local.count() == local[0].count() + local[1].count());
    CHECK(ks.local.count() == kf.local.count());

    // coverage is monotone: none < semi <= full
    std::set<int> semi_set(ks.generator->classes.begin(), ks.generator->classes.end());
    for (int k : semi_set) CHECK(kf.generator->covers(k));
}

TEST_CASE("generator sampling is deterministic and honors its class list") {
    DataSpec ds = small_spec();
    const std::vector<LabeledSet> local{gen_dataset(ds)};
    const KnowledgeView kv = make_knowledge_view(Knowledge::semi, ds, 1, local, 0.5, 5);
    REQUIRE(kv.generator.has_value());
    const Generator& g = *kv.generator;

    const LabeledSet a = g.sample(1, 4, 0x10);
    const LabeledSet b = g.sample(1, 4, 0x10);
    CHECK(a.count() == 4);
    for (int y : a.labels) CHECK(y == 1);
    CHECK((a.images.values() - b.images.values()).cwiseAbs().maxCoeff() == 0.0);

    const LabeledSet c = g.sample(1, 4, 0x11); // different stream, fresh draws
    CHECK((a.images.values() - c.images.values()).cwiseAbs().maxCoeff() > 0.0);

    int uncovered = -1;
    for (int k = 0; k < ds.num_classes; ++k)
        if (!g.covers(k)) uncovered = k;
    REQUIRE(uncovered >= 0);
    CHECK_THROWS(g.sample(uncovered, 1, 0x10));

    // generator draws are independent of training-set draws: samples differ
    // from the dataset's own target-class rows but share the prototype
    DataSpec noiseless = ds;
    noiseless.noise_std = 0.0;
    const KnowledgeView kv0 = make_knowledge_view(Knowledge::full, noiseless, 1, local);
    const Vec proto = class_prototype(noiseless, 1).values();
    const LabeledSet clean = kv0.generator->sample(1, 2, 0x22);
    const Index px = noiseless.c * noiseless.h * noiseless.w;
    for (Index i = 0; i < 2; ++i)
        CHECK((clean.images.values().segment(i * px, px) - proto).cwiseAbs().maxCoeff() ==
              0.0);
}
