#include <doctest.h>

#include "fedlab/config.hpp"
#include "fedlab/io.hpp"

#include "oracles.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace fedlab;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("fedlab_io_test_" + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Tensor random_tensor(oracle::TestRng& rng, const Shape& shape) {
    Vec v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-3.0, 3.0);
    return Tensor(v, shape);
}

} // namespace

TEST_CASE("gvt1 round-trips f64 bit-exactly and widens f32") {
    TempDir dir;
    oracle::TestRng rng(1);
    const Tensor t = random_tensor(rng, {2, 3, 4});

    save_gvt1(dir.file("a.gvt1"), t);
    const Tensor back = load_gvt1(dir.file("a.gvt1"));
    CHECK(back.shape() == t.shape());
    CHECK((back.values() - t.values()).cwiseAbs().maxCoeff() == 0.0);

    save_gvt1(dir.file("b.gvt1"), t, true);
    const Tensor widened = load_gvt1(dir.file("b.gvt1"));
    CHECK(widened.shape() == t.shape());
    // f32 quantization error only
    CHECK((widened.values() - t.values()).cwiseAbs().maxCoeff() <= 1e-6);
    for (Index i = 0; i < t.values().size(); ++i)
        CHECK(double(float(t.values()[i])) == widened.values()[i]);

    // scalar-shaped tensors survive too
    const Tensor s = Tensor::scalar(0.125);
    save_gvt1(dir.file("s.gvt1"), s);
    CHECK(load_gvt1(dir.file("s.gvt1")).values()[0] == 0.125);
}

TEST_CASE("gvt1 rejects malformed headers and truncated payloads") {
    TempDir dir;
    write_text_file(dir.file("bad_magic.gvt1"), "GVTX f64 1 3\n");
    CHECK_THROWS_AS(load_gvt1(dir.file("bad_magic.gvt1")), input_error);

    write_text_file(dir.file("bad_type.gvt1"), "GVT1 f16 1 3\n");
    CHECK_THROWS_AS(load_gvt1(dir.file("bad_type.gvt1")), input_error);

    write_text_file(dir.file("truncated.gvt1"), "GVT1 f64 1 3\nab");
    CHECK_THROWS_AS(load_gvt1(dir.file("truncated.gvt1")), input_error);

    CHECK_THROWS_AS(load_gvt1(dir.file("missing.gvt1")), input_error);
}

TEST_CASE("parameter bundles round-trip for both architectures") {
    TempDir dir;
    ModelSpec conv;
    conv.arch = Arch::convnet_bn;
    conv.in_c = 1;
    conv.in_h = 6;
    conv.in_w = 6;
    conv.num_classes = 3;
    conv.conv1 = 2;
    conv.conv2 = 3;
    ModelSpec mlp;
    mlp.arch = Arch::mlp;
    mlp.in_c = 1;
    mlp.in_h = 4;
    mlp.in_w = 4;
    mlp.num_classes = 3;
    mlp.mlp_hidden = {6};

    int idx = 0;
    for (const ModelSpec& ms : {conv, mlp}) {
        const ParamVector pv = init_params(ms, 7);
        const std::string prefix = dir.file("model" + std::to_string(idx++));
        save_params(prefix, pv);
        const ParamVector back = load_params(prefix);
        CHECK((back.trainable - pv.trainable).cwiseAbs().maxCoeff() == 0.0);
        CHECK(back.buffers.size() == pv.buffers.size());
        if (pv.buffers.size())
            CHECK((back.buffers - pv.buffers).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(back.layout.size() == pv.layout.size());
        for (std::size_t i = 0; i < pv.layout.size(); ++i) {
            CHECK(back.layout[i].name == pv.layout[i].name);
            CHECK(back.layout[i].buffer == pv.layout[i].buffer);
            CHECK(back.layout[i].offset == pv.layout[i].offset);
            CHECK(back.layout[i].shape == pv.layout[i].shape);
        }
    }
}

TEST_CASE("labeled sets round-trip with labels intact") {
    TempDir dir;
    DataSpec ds;
    ds.num_classes = 3;
    ds.c = 1;
    ds.h = 4;
    ds.w = 4;
    ds.samples_per_class = 3;
    ds.seed = 9;
    const LabeledSet s = gen_dataset(ds);
    save_labeled_set(dir.file("set"), s);
    const LabeledSet back = load_labeled_set(dir.file("set"));
    CHECK(back.labels == s.labels);
    CHECK((back.images.values() - s.images.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ppm export quantizes to 8 bits and reads back") {
    TempDir dir;
    oracle::TestRng rng(2);

    // grayscale [1,H,W] replicates to three identical channels
    Vec g(6 * 5);
    for (Index i = 0; i < g.size(); ++i) g[i] = rng.uniform();
    const Tensor gray(g, {1, 6, 5});
    save_ppm(dir.file("gray.ppm"), gray);
    const Tensor back = load_ppm(dir.file("gray.ppm"));
    REQUIRE(back.shape() == Shape{3, 6, 5});
    for (Index px = 0; px < 30; ++px) {
        const double want = std::round(std::min(1.0, std::max(0.0, g[px])) * 255.0) / 255.0;
        for (Index ch = 0; ch < 3; ++ch)
            CHECK(back.values()[ch * 30 + px] == doctest::Approx(want).epsilon(1e-12));
    }

    // out-of-range values clip at the boundary
    Vec hot(4);
    hot << -0.5, 0.0, 1.0, 1.5;
    save_ppm(dir.file("hot.ppm"), Tensor(hot, {1, 2, 2}));
    const Tensor clipped = load_ppm(dir.file("hot.ppm"));
    CHECK(clipped.values()[0] == 0.0);
    CHECK(clipped.values()[1] == 0.0);
    CHECK(clipped.values()[2] == 1.0);
    CHECK(clipped.values()[3] == 1.0);

    // rank-4 single batch and 3-channel forms are accepted
    Vec rgb(3 * 2 * 2);
    for (Index i = 0; i < rgb.size(); ++i) rgb[i] = rng.uniform();
    save_ppm(dir.file("rgb.ppm"), Tensor(rgb, {1, 3, 2, 2}));
    CHECK(load_ppm(dir.file("rgb.ppm")).shape() == Shape{3, 2, 2});

    CHECK_THROWS_AS(save_ppm(dir.file("bad.ppm"), Tensor::zeros({2, 2, 2})),
                    contract_violation); // two channels is neither gray nor rgb
}

TEST_CASE("ppm reader tolerates comments and rejects other formats") {
    TempDir dir;
    {
        std::ofstream out(dir.file("commented.ppm"), std::ios::binary);
        out << "P6\n# a comment line\n2 1\n# another\n255\n";
        const unsigned char px[6] = {255, 0, 0, 0, 255, 0};
        out.write(reinterpret_cast<const char*>(px), 6);
    }
    const Tensor t = load_ppm(dir.file("commented.ppm"));
    REQUIRE(t.shape() == Shape{3, 1, 2});
    CHECK(t.values()[0] == 1.0); // R of first pixel

    write_text_file(dir.file("p3.ppm"), "P3\n1 1\n255\n0 0 0\n");
    CHECK_THROWS_AS(load_ppm(dir.file("p3.ppm")), input_error);

    write_text_file(dir.file("short.ppm"), "P6\n2 2\n255\nabc");
    CHECK_THROWS_AS(load_ppm(dir.file("short.ppm")), input_error);
}

TEST_CASE("num_str prints shortest forms that round-trip") {
    CHECK(num_str(0.0) == "0");
    CHECK(num_str(1.0) == "1");
    CHECK(num_str(0.5) == "0.5");
    CHECK(num_str(-2.25) == "-2.25");

    oracle::TestRng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double v = rng.uniform(-1e6, 1e6) * std::pow(10.0, double(rng.uniform_int(-12, 3)));
        const std::string s = num_str(v);
        CHECK(std::stod(s) == v);
    }
    CHECK(std::stod(num_str(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("csv writer emits headered rows and refuses cells needing quoting") {
    TempDir dir;
    {
        CsvWriter csv(dir.file("t.csv"), {"round", "value"});
        csv.row({"1", num_str(0.5)});
        csv.row({"2", num_str(-1.25)});
        CHECK_THROWS_AS(csv.row({"3", "a,b"}), contract_violation);
        CHECK_THROWS_AS(csv.row({"4"}), contract_violation); // wrong arity
    }
    CHECK(read_text_file(dir.file("t.csv")) == "round,value\n1,0.5\n2,-1.25\n");
}

TEST_CASE("fnv1a64 digests are stable and sensitive") {
    // published test vectors for 64-bit fnv-1a
    CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);

    CHECK(hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
    CHECK(hex64(0x1ull) == "0000000000000001");

    TempDir dir;
    write_text_file(dir.file("x.txt"), "foobar");
    CHECK(fnv1a64_file(dir.file("x.txt")) == 0x85944171f73967e8ull);
    CHECK_THROWS_AS(fnv1a64_file(dir.file("missing.txt")), input_error);
}

TEST_CASE("config parses flat files, json, and command-line pairs") {
    SUBCASE("flat key = value lines with comments") {
        const Config c = Config::from_text("# comment\n"
                                           "fl.alpha = 0.05\n"
                                           "data.classes = 7\n"
                                           "agr.rule = multi-krum\n"
                                           "flag.on = true\n",
                                           "inline");
        CHECK(c.get_num("fl.alpha", 0.1) == 0.05);
        CHECK(c.get_int("data.classes", 10) == 7);
        CHECK(c.get_str("agr.rule", "mean") == "multi-krum");
        CHECK(c.get_bool("flag.on", false));
        CHECK(c.get_int("data.spc", 20) == 20); // default fills the gap
        CHECK(c.has("fl.alpha"));
        CHECK(!c.has("fl.rounds"));
    }
    SUBCASE("json trees flatten with dotted keys") {
        const Config c = Config::from_text(R"({"fl": {"alpha": 0.05, "n": 8},
                                               "agr": {"rule": "bulyan"}})",
                                           "inline.json");
        CHECK(c.get_num("fl.alpha", 0.1) == 0.05);
        CHECK(c.get_int("fl.n", 4) == 8);
        CHECK(c.get_str("agr.rule", "mean") == "bulyan");
    }
    SUBCASE("set_pair mirrors --set overrides") {
        Config c;
        c.set_pair("fl.alpha=0.2");
        CHECK(c.get_num("fl.alpha", 0.1) == 0.2);
        CHECK_THROWS_AS(c.set_pair("no_equals_sign"), input_error);
    }
    SUBCASE("bad numbers carry their origin in the message") {
        const Config c = Config::from_text("fl.alpha = banana\n", "exp.cfg");
        try {
            c.get_num("fl.alpha", 0.1);
            FAIL("expected input_error");
        } catch (const input_error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("fl.alpha") != std::string::npos);
        }
    }
    SUBCASE("malformed lines report file and line number") {
        try {
            Config::from_text("fl.alpha = 0.1\nbroken line\n", "exp.cfg");
            FAIL("expected input_error");
        } catch (const input_error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("exp.cfg") != std::string::npos);
            CHECK(msg.find("2") != std::string::npos);
        }
    }
    SUBCASE("resolved() records every lookup with its effective value") {
        const Config c = Config::from_text("fl.alpha = 0.05\n", "inline");
        (void)c.get_num("fl.alpha", 0.1);
        (void)c.get_int("fl.rounds", 300);
        const auto& seen = c.resolved();
        REQUIRE(seen.count("fl.alpha") == 1);
        REQUIRE(seen.count("fl.rounds") == 1);
        CHECK(seen.at("fl.alpha") == "0.05");
        CHECK(seen.at("fl.rounds") == "300");
    }
    SUBCASE("dump emits sorted lines that reparse to the same map") {
        Config c;
        c.set("b.key", "2");
        c.set("a.key", "1");
        const std::string text = c.dump();
        CHECK(text.find("a.key") < text.find("b.key"));
        const Config back = Config::from_text(text, "redump");
        CHECK(back.entries() == c.entries());
    }
}
