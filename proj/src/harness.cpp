#include "fedlab/harness.hpp"

#include "fedlab/io.hpp"
#include "fedlab/metrics.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fedlab {

const char* knowledge_name(Knowledge k) {
    switch (k) {
    case Knowledge::full: return "full";
    case Knowledge::semi: return "semi";
    case Knowledge::none: return "none";
    }
    throw contract_violation("knowledge_name: bad level");
}

Knowledge knowledge_from_name(const std::string& name) {
    if (name == "full") return Knowledge::full;
    if (name == "semi") return Knowledge::semi;
    if (name == "none") return Knowledge::none;
    throw input_error("unknown knowledge level: " + name + " (full|semi|none)");
}

ExperimentSetup build_setup(const Config& cfg) {
    ExperimentSetup s;
    s.seed = cfg.get_u64("seed", 1);

    s.data.num_classes = cfg.get_int("data.classes", 10);
    s.data.c = cfg.get_int("data.channels", 1);
    s.data.h = cfg.get_int("data.height", 16);
    s.data.w = cfg.get_int("data.width", 16);
    s.data.samples_per_class = cfg.get_int("data.samples-per-class", 20);
    s.data.noise_std = cfg.get_num("data.noise-std", 0.05);
    s.data.seed = cfg.get_u64("data.seed", s.seed);

    const std::string arch = cfg.get_str("model.arch", "convnet-bn");
    if (arch == "convnet-bn")
        s.model.arch = Arch::convnet_bn;
    else if (arch == "mlp")
        s.model.arch = Arch::mlp;
    else
        throw input_error("unknown model.arch: " + arch + " (convnet-bn|mlp)");
    s.model.in_c = s.data.c;
    s.model.in_h = s.data.h;
    s.model.in_w = s.data.w;
    s.model.num_classes = s.data.num_classes;
    s.model.conv1 = cfg.get_int("model.conv1", 8);
    s.model.conv2 = cfg.get_int("model.conv2", 16);
    s.model.bn_momentum = cfg.get_num("model.bn-momentum", 0.1);
    {
        const std::string hidden = cfg.get_str("model.hidden", "32");
        s.model.mlp_hidden.clear();
        for (std::size_t pos = 0; pos < hidden.size();) {
            std::size_t next = hidden.find(',', pos);
            if (next == std::string::npos) next = hidden.size();
            s.model.mlp_hidden.push_back(Index(std::stoll(hidden.substr(pos, next - pos))));
            pos = next + 1;
        }
    }

    s.fl.model = s.model;
    s.fl.n_clients = cfg.get_int("fl.clients", 8);
    s.fl.batch = cfg.get_int("fl.batch", 4);
    s.fl.alpha = cfg.get_num("fl.alpha", 0.1);
    s.fl.seed = s.seed;
    s.malicious = cfg.get_int("fl.malicious", 2);
    require(s.malicious >= 0 && s.malicious < s.fl.n_clients,
            "fl.malicious must be in [0, clients)");
    if (double(s.malicious) > 0.2 * double(s.fl.n_clients))
        warn("fl.malicious exceeds 20% of clients; proceeding anyway");
    s.train_rounds = cfg.get_int("fl.rounds", 300);
    s.converge_eps = cfg.get_num("fl.converge-eps", 0.0);
    s.converge_window = cfg.get_int("fl.converge-window", 10);

    s.agr.rule = agr_rule_from_name(cfg.get_str("agr.rule", "multi-krum"));
    s.agr.m = cfg.get_int("agr.m", s.malicious);
    s.agr.fang_base = agr_rule_from_name(cfg.get_str("agr.fang-base", "mean"));
    s.agr.afa_normalize = cfg.get_bool("agr.afa-normalize", true);

    s.attack_enabled = cfg.get_bool("attack.enabled", true);
    s.knowledge = knowledge_from_name(cfg.get_str("attack.knowledge", "semi"));
    s.semi_fraction = cfg.get_num("attack.semi-fraction", 0.5);
    s.ascent_scale = cfg.get_num("attack.ascent-scale", 1.0);

    AttackPlan& p = s.plan;
    p.y_tar = cfg.get_int("attack.target-class", 0);
    require(p.y_tar >= 0 && p.y_tar < s.data.num_classes, "attack.target-class out of range");
    // Craft rates per route; the loss-raising side takes the ascent scale.
    double a1 = 1e-2, a2 = 1e-5;
    if (s.knowledge == Knowledge::semi) a1 = 5e-3, a2 = 1e-4;
    if (s.knowledge == Knowledge::none) a1 = 1e-3, a2 = 1e-5;
    p.alpha1 = cfg.get_num("attack.alpha1", a1);
    p.alpha2 = cfg.get_num("attack.alpha2", a2);
    if (s.knowledge == Knowledge::full)
        p.alpha2 *= s.ascent_scale;
    else
        p.alpha1 *= s.ascent_scale;
    p.r_end = cfg.get_int("attack.r-end", 300);
    p.p_end = cfg.get_int("attack.p-end", 2000);
    p.lambda0 = cfg.get_num("attack.lambda0", 1.0);
    p.lambda1 = cfg.get_num("attack.lambda1", 1e-2);
    p.lambda2 = cfg.get_num("attack.lambda2", 1e-6);
    p.lambda3 = cfg.get_num("attack.lambda3", 1.0);
    p.deep_lr = cfg.get_num("attack.deep-lr", 1e-2);
    p.deep_count = cfg.get_int("attack.deep-count", 8);
    p.craft_samples_per_class = cfg.get_int("attack.craft-spc", 16);
    p.semi_samples_per_class = cfg.get_int("attack.semi-spc", 8);

    double g0 = 10.0, b0 = 1.0;
    if (s.agr.rule == AgrRule::bulyan) g0 = 1e-2;
    if (s.agr.rule == AgrRule::afa) b0 = 1e-2;
    p.gamma0 = cfg.get_num("attack.gamma0", g0);
    p.beta0 = cfg.get_num("attack.beta0", b0);
    p.opt_lr_gamma = cfg.get_num("attack.opt-lr-gamma", 1e-5);
    p.opt_lr_beta = cfg.get_num("attack.opt-lr-beta", 1e-5);
    p.mix_stop_eps = cfg.get_num("attack.mix-stop-eps", 1e-9);
    p.campaign_rounds = cfg.get_int("attack.campaign-rounds", 200);
    p.replacement_tolerance = cfg.get_num("attack.tolerance", 0.01);
    p.tolerance_is_relative = cfg.get_bool("attack.tolerance-relative", true);
    p.seed = derive_seed(s.seed, {0xa77ac4});

    InversionTask& inv = s.inversion;
    inv.spec = s.model;
    inv.y_tar = p.y_tar;
    inv.num_images = cfg.get_int("inversion.images", 1);
    const std::string obj = cfg.get_str("inversion.objective", "cosine");
    if (obj == "cosine")
        inv.objective = InvObjective::cosine;
    else if (obj == "l2")
        inv.objective = InvObjective::l2;
    else
        throw input_error("unknown inversion.objective: " + obj + " (cosine|l2)");
    inv.lambda0 = cfg.get_num("inversion.lambda0", 10.0);
    inv.lambda1 = cfg.get_num("inversion.lambda1", 1e-2);
    inv.lambda2 = cfg.get_num("inversion.lambda2", 1e-6);
    inv.lambda3 = cfg.get_num("inversion.lambda3", 1.0);
    inv.squared_l2_reg = cfg.get_bool("inversion.squared-l2", false);
    inv.steps = cfg.get_int("inversion.steps", 1200);
    inv.lr = cfg.get_num("inversion.lr", 0.1);
    const std::string opt = cfg.get_str("inversion.optimizer", "adam");
    if (opt == "adam")
        inv.optimizer = InvOptimizer::adam;
    else if (opt == "sgd")
        inv.optimizer = InvOptimizer::sgd;
    else
        throw input_error("unknown inversion.optimizer: " + opt + " (adam|sgd)");
    inv.sign_step = cfg.get_bool("inversion.sign-step", false);
    inv.seed = derive_seed(s.seed, {0x10af});
    return s;
}

namespace {

std::string acc_str(double v) { return v < 0 ? "" : num_str(v); }

struct StageClock {
    ordered_json stages = ordered_json::array();
    std::string running; // the stage a thrown exception came from

    template <class F> void run(const char* name, F&& f) {
        running = name;
        const auto t0 = std::chrono::steady_clock::now();
        std::forward<F>(f)();
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        stages.push_back({{"stage", name}, {"wall_ms", ms}});
        running.clear();
    }
};

struct MetricsRow {
    std::string stage;
    int round = 0;
    double psnr = -1, ssim = -1, lgap = -1, model_distance = -1;
    double targeted_acc = -1, main_acc = -1;
};

void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
    CsvWriter csv(path, {"stage", "round", "psnr", "ssim", "lgap", "model_distance",
                         "targeted_acc", "main_acc"});
    for (const auto& r : rows)
        csv.row({r.stage, std::to_string(r.round), acc_str(r.psnr), acc_str(r.ssim),
                 acc_str(r.lgap), acc_str(r.model_distance), acc_str(r.targeted_acc),
                 acc_str(r.main_acc)});
}

} // namespace

ExperimentOutcome run_experiment(const Config& cfg, const std::string& out_dir,
                                 RunStage stop) {
    const ExperimentSetup s = build_setup(cfg);
    fs::create_directories(out_dir);
    auto path = [&](const std::string& rel) { return (fs::path(out_dir) / rel).string(); };

    ExperimentOutcome outcome;
    outcome.attack = s.attack_enabled;
    StageClock clock;
    std::vector<MetricsRow> metrics;
    std::string failed_stage;

    try {
        // ---- data ----------------------------------------------------------
        LabeledSet server_val, target_probe;
        std::vector<int> mal_ids;
        FlState st;
        Generator world{s.data, {}};
        for (int k = 0; k < s.data.num_classes; ++k) world.classes.push_back(k);

        clock.run("data", [&] {
            LabeledSet full = gen_dataset(s.data);
            st.shards = partition_iid(full, s.fl.n_clients, derive_seed(s.seed, {0x9a27}));
            std::vector<LabeledSet> val_parts, probe_parts;
            const int val_spc = std::max(4, s.data.samples_per_class / 2);
            for (int k = 0; k < s.data.num_classes; ++k)
                val_parts.push_back(world.sample(k, val_spc, 0x5e8f));
            server_val = concat(val_parts);
            target_probe = world.sample(s.plan.y_tar, 16, 0x9e0b);
            st.server_val = server_val;
            for (int i = s.fl.n_clients - s.malicious; i < s.fl.n_clients; ++i)
                mal_ids.push_back(i);
        });

        // ---- train ---------------------------------------------------------
        AuditLog audit(path("agr_audit.jsonl"));
        ParamVector phi0;
        clock.run("train", [&] {
            st.params = init_params(s.model, s.seed);
            phi0 = st.params;
            TrainOptions topt;
            topt.rounds = s.train_rounds;
            topt.targeted_probe = &target_probe;
            topt.converge_eps = s.converge_eps;
            topt.converge_window = s.converge_window;
            const std::vector<TraceRow> trace = run_training(st, s.fl, s.agr, topt, &audit);
            CsvWriter csv(path("trace.csv"),
                          {"round", "train_loss", "train_acc", "targeted_acc",
                           "model_distance"});
            for (const auto& r : trace)
                csv.row({std::to_string(r.round), num_str(r.train_loss), num_str(r.train_acc),
                         acc_str(r.targeted_acc), acc_str(r.dist_phi_mal)});
            save_params(path("model_trained"), st.params);
        });
        {
            MetricsRow r;
            r.stage = "train";
            r.round = st.round;
            r.targeted_acc =
                accuracy(s.model, st.params, target_probe.images, target_probe.labels);
            r.main_acc = accuracy(s.model, st.params, server_val.images, server_val.labels);
            metrics.push_back(r);
        }

        // ---- craft + campaign ----------------------------------------------
        const auto wants = [&](RunStage at) { return int(stop) >= int(at); };
        MaliciousArtifact art;
        if (s.attack_enabled && wants(RunStage::craft)) {
            clock.run("craft", [&] {
                std::vector<LabeledSet> local;
                for (int id : mal_ids) local.push_back(st.shards.at(std::size_t(id)));
                const KnowledgeView view =
                    make_knowledge_view(s.knowledge, s.data, s.plan.y_tar, local,
                                        s.semi_fraction, derive_seed(s.seed, {0x5e31}));
                const ParamVector& start = s.knowledge == Knowledge::full ? phi0 : st.params;
                art = craft(start, s.model, view, s.plan);
                save_params(path("model_malicious"), art.phi_mal);
                CsvWriter csv(path("craft_trace.csv"), {"round", "targeted_loss", "main_loss"});
                for (std::size_t i = 0; i < art.trace.size(); ++i)
                    csv.row({std::to_string(i), num_str(art.trace[i].targeted_loss),
                             num_str(art.trace[i].main_loss)});
                if (art.synthesized.count() > 0)
                    save_labeled_set(path("synthesized"), art.synthesized);
                MetricsRow r;
                r.stage = "craft";
                r.round = st.round;
                r.model_distance = model_distance(st.params, art.phi_mal);
                r.targeted_acc = accuracy(s.model, art.phi_mal, target_probe.images,
                                          target_probe.labels);
                r.main_acc =
                    accuracy(s.model, art.phi_mal, server_val.images, server_val.labels);
                metrics.push_back(r);
            });

            if (wants(RunStage::poison)) clock.run("poison", [&] {
                const CampaignReport rep = run_poisoning_campaign(st, s.fl, s.agr, art.phi_mal,
                                                                  mal_ids, s.plan, &audit);
                outcome.campaign_initial = rep.initial_distance;
                outcome.campaign_final = rep.final_distance;
                outcome.campaign_success = rep.success;
                CsvWriter csv(path("campaign.csv"),
                              {"round", "gamma", "beta", "l_dis", "distance", "accepted"});
                for (const auto& row : rep.rows)
                    csv.row({std::to_string(row.round), num_str(row.gamma), num_str(row.beta),
                             num_str(row.l_dis), num_str(row.distance),
                             row.accepted ? "1" : "0"});
                std::string report;
                report += "initial_distance " + num_str(rep.initial_distance) + "\n";
                report += "tolerance " + num_str(rep.tolerance) + "\n";
                report += "final_distance " + num_str(rep.final_distance) + "\n";
                report += "rounds_used " + std::to_string(rep.rounds_used) + "\n";
                report += std::string("success ") + (rep.success ? "true" : "false") + "\n";
                write_text_file(path("campaign.txt"), report);
                save_params(path("model_poisoned"), st.params);
                MetricsRow r;
                r.stage = "poison";
                r.round = st.round;
                r.model_distance = rep.final_distance;
                r.targeted_acc = accuracy(s.model, st.params, target_probe.images,
                                          target_probe.labels);
                r.main_acc =
                    accuracy(s.model, st.params, server_val.images, server_val.labels);
                metrics.push_back(r);
            });
        }

        // ---- targeted round --------------------------------------------------
        // The experimenter pins the round's batches: the victim holds the
        // targeted sample(s) and every other batch avoids the targeted class,
        // so the victim's gradient is the only targeted signal in the round.
        ParamVector phi_before;
        Vec delta_agr;
        LabeledSet targets;
        if (wants(RunStage::full)) clock.run("target", [&] {
            const int victim = 0;
            const int m_place = std::min(Index(s.inversion.num_images), Index(s.fl.batch));
            auto count_class = [&](const LabeledSet& ls) {
                Index n = 0;
                for (int lab : ls.labels)
                    if (lab == s.plan.y_tar) ++n;
                return n;
            };
            if (count_class(st.shards[std::size_t(victim)]) >= m_place) {
                LabeledSet own = filter_by_class(st.shards[std::size_t(victim)],
                                                 s.plan.y_tar, true);
                std::vector<Index> idx;
                for (Index i = 0; i < m_place; ++i) idx.push_back(i);
                targets = subset(own, idx);
            } else {
                warn("victim shard lacks targeted samples; drawing from the distribution");
                targets = world.sample(s.plan.y_tar, int(m_place), 0x717);
            }

            std::vector<LabeledSet> forced(std::size_t(s.fl.n_clients));
            for (int i = 0; i < s.fl.n_clients; ++i) {
                const LabeledSet& shard = st.shards[std::size_t(i)];
                LabeledSet pool =
                    count_class(shard) < shard.count()
                        ? filter_by_class(shard, s.plan.y_tar, false)
                        : shard;
                Rng rng(derive_seed(s.seed, {0x7a36, std::uint64_t(st.round),
                                             std::uint64_t(i)}));
                if (i == victim) {
                    if (s.fl.batch > int(m_place)) {
                        LabeledSet rest = sample_batch(pool, s.fl.batch - int(m_place), rng);
                        forced[std::size_t(i)] = concat({targets, rest});
                    } else {
                        forced[std::size_t(i)] = targets;
                    }
                } else {
                    forced[std::size_t(i)] = sample_batch(pool, s.fl.batch, rng);
                }
            }

            // Malicious clients lie low at the capture round: they behave like
            // ordinary honest clients (non-target batches, genuine updates) so
            // selection-based rules have nothing to reject.
            std::map<int, GradientUpdate> overrides;
            phi_before = st.params;
            run_round(st, s.fl, s.agr, overrides, &forced, &audit);
            delta_agr = recover_aggregate(phi_before, st.params, s.fl.alpha);

            save_params(path("model_target_round"), phi_before);
            save_gvt1(path("delta_agr.gvt1"), Tensor(delta_agr, {delta_agr.size()}));
            const Index chw = targets.images.size() / targets.images.dim(0);
            for (Index i = 0; i < targets.images.dim(0); ++i)
                save_ppm(path("original_" + std::to_string(i) + ".ppm"),
                         Tensor(targets.images.values().segment(i * chw, chw),
                                {targets.images.dim(1), targets.images.dim(2),
                                 targets.images.dim(3)}));

            const LabeledSet val_nt = filter_by_class(server_val, s.plan.y_tar, false);
            outcome.lgap = loss_gap(s.model, phi_before, st.params, targets.images,
                                    targets.labels, val_nt.images, val_nt.labels);
            MetricsRow r;
            r.stage = "target";
            r.round = st.round;
            r.lgap = outcome.lgap;
            if (s.attack_enabled)
                r.model_distance = model_distance(st.params, art.phi_mal);
            r.targeted_acc =
                accuracy(s.model, st.params, target_probe.images, target_probe.labels);
            r.main_acc = accuracy(s.model, st.params, server_val.images, server_val.labels);
            metrics.push_back(r);
        });

        // ---- invert + score --------------------------------------------------
        if (wants(RunStage::full)) clock.run("invert", [&] {
            InversionTask task = s.inversion;
            task.params = phi_before;
            task.delta_agr = delta_agr;
            const InversionResult res = invert(task);
            save_gvt1(path("recovered.gvt1"), res.images);
            CsvWriter csv(path("inversion_trace.csv"), {"step", "objective"});
            for (std::size_t i = 0; i < res.objective_trace.size(); ++i)
                csv.row({std::to_string(i), num_str(res.objective_trace[i])});
            const Index chw = res.images.size() / res.images.dim(0);
            for (Index i = 0; i < res.images.dim(0); ++i)
                save_ppm(path("recovered_" + std::to_string(i) + ".ppm"),
                         Tensor(res.images.values().segment(i * chw, chw),
                                {res.images.dim(1), res.images.dim(2), res.images.dim(3)}));

            const MatchScore score = match_and_score(res.images, targets.images);
            CsvWriter scsv(path("scores.csv"), {"recovered", "original", "psnr", "ssim"});
            for (std::size_t i = 0; i < score.psnr_db.size(); ++i)
                scsv.row({std::to_string(i), std::to_string(score.assignment[i]),
                          num_str(score.psnr_db[i]), num_str(score.ssim_val[i])});
            outcome.psnr = score.mean_psnr;
            outcome.ssim = score.mean_ssim;
            outcome.targeted_acc =
                accuracy(s.model, st.params, target_probe.images, target_probe.labels);
            outcome.main_acc =
                accuracy(s.model, st.params, server_val.images, server_val.labels);

            MetricsRow r;
            r.stage = "invert";
            r.round = st.round;
            r.psnr = score.mean_psnr;
            r.ssim = score.mean_ssim;
            r.lgap = outcome.lgap;
            if (s.attack_enabled)
                r.model_distance = model_distance(st.params, art.phi_mal);
            r.targeted_acc = outcome.targeted_acc;
            r.main_acc = outcome.main_acc;
            metrics.push_back(r);
        });
    } catch (...) {
        failed_stage = clock.running.empty() ? "setup" : clock.running;
        write_metrics(path("metrics.csv"), metrics);
        ordered_json man;
        man["artifact"] = "fedlab";
        man["seed"] = s.seed;
        man["failed_stage"] = failed_stage;
        man["stages"] = clock.stages;
        write_text_file(path("manifest.json"), man.dump(2) + "\n");
        throw;
    }

    write_metrics(path("metrics.csv"), metrics);

    ordered_json man;
    man["artifact"] = "fedlab";
    man["seed"] = s.seed;
    man["config"] = ordered_json::object();
    for (const auto& [k, v] : cfg.resolved()) man["config"][k] = v;
    man["stages"] = clock.stages;
    man["outputs"] = ordered_json::object();
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(out_dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
        man["outputs"][f] = hex64(fnv1a64_file((fs::path(out_dir) / f).string()));
    write_text_file(path("manifest.json"), man.dump(2) + "\n");
    return outcome;
}

void run_sweep(const Config& cfg, const std::string& out_dir, const std::string& axis,
               const std::vector<std::string>& values, int seeds_per_value, int jobs) {
    require(!values.empty(), "sweep: need at least one axis value");
    require(seeds_per_value >= 1, "sweep: need at least one seed per value");
    std::string key;
    if (axis == "batch-size")
        key = "fl.batch";
    else if (axis == "client-count")
        key = "fl.clients";
    else if (axis == "loss-gap")
        key = "attack.ascent-scale";
    else if (axis == "knowledge")
        key = "attack.knowledge";
    else if (axis == "agr")
        key = "agr.rule";
    else
        throw input_error("unknown sweep axis: " + axis +
                          " (batch-size|client-count|loss-gap|knowledge|agr)");

    fs::create_directories(out_dir);
    const std::uint64_t base_seed = cfg.get_u64("seed", 1);

    struct Job {
        std::string value;
        int seed_idx = 0;
        Config cfg;
        std::string dir;
        ExperimentOutcome out;
    };
    std::vector<Job> runs;
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        for (int si = 0; si < seeds_per_value; ++si) {
            Job j;
            j.value = values[vi];
            j.seed_idx = si;
            j.cfg = cfg;
            j.cfg.set(key, values[vi]);
            j.cfg.set("seed", std::to_string(derive_seed(
                                  base_seed, {0x5aee, std::uint64_t(vi), std::uint64_t(si)})));
            j.dir = (fs::path(out_dir) / (axis + "-" + values[vi] + "-s" +
                                          std::to_string(si)))
                        .string();
            runs.push_back(std::move(j));
        }
    }

    if (jobs <= 1) {
        for (auto& j : runs) j.out = run_experiment(j.cfg, j.dir);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= runs.size()) return;
                runs[i].out = run_experiment(runs[i].cfg, runs[i].dir);
            }
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    CsvWriter csv((fs::path(out_dir) / "sweep.csv").string(),
                  {"axis", "value", "seed", "psnr", "ssim", "lgap"});
    for (const auto& j : runs)
        csv.row({axis, j.value, std::to_string(j.seed_idx), num_str(j.out.psnr),
                 num_str(j.out.ssim), num_str(j.out.lgap)});
}

} // namespace fedlab
