// Command-line front end: pipeline prefixes (train/craft/poison), the full
// experiment, standalone inversion on saved artifacts, axis sweeps, and small
// probes (aggregation on serialized updates, the probability table, metrics).

#include "fedlab/harness.hpp"
#include "fedlab/io.hpp"
#include "fedlab/metrics.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>

using namespace fedlab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> sets;
    std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file (flat text or JSON)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--set", args.sets, "override: key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "seed override");
}

Config load_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config() : Config::from_file(args.config_path);
    for (const auto& kv : args.sets) cfg.set_pair(kv);
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    return cfg;
}

Tensor load_image_file(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0)
        return load_ppm(path);
    return load_gvt1(path);
}

// [C,H,W] -> [1,C,H,W] so single images fit the batched scorers.
Tensor as_batch(const Tensor& t) {
    if (t.rank() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
    return t;
}

// PPM files are always 3-channel; average the channels down when the model
// being matched against is single-channel (our writer replicates, so the
// channels are identical anyway).
Tensor match_channels(const Tensor& t, Index want_c) {
    if (t.rank() != 4 || t.dim(1) == want_c || t.dim(1) != 3 || want_c != 1) return t;
    const Index n = t.dim(0), h = t.dim(2), w = t.dim(3);
    Vec out(n * h * w);
    for (Index i = 0; i < n; ++i)
        out.segment(i * h * w, h * w) =
            (t.values().segment((i * 3 + 0) * h * w, h * w) +
             t.values().segment((i * 3 + 1) * h * w, h * w) +
             t.values().segment((i * 3 + 2) * h * w, h * w)) /
            3.0;
    return Tensor(std::move(out), {n, 1, h, w});
}

int run_invert_files(const CommonArgs& args, const std::string& params_prefix,
                     const std::string& delta_path, const std::string& original_path) {
    Config cfg = load_config(args);
    ExperimentSetup s = build_setup(cfg);
    InversionTask task = s.inversion;
    task.params = load_params(params_prefix);
    task.delta_agr = load_gvt1(delta_path).values();

    std::filesystem::create_directories(args.out_dir);
    auto path = [&](const std::string& rel) {
        return (std::filesystem::path(args.out_dir) / rel).string();
    };
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
    std::printf("inverted %d image(s), final objective %s\n", task.num_images,
                res.objective_trace.empty() ? "n/a"
                                            : num_str(res.objective_trace.back()).c_str());
    if (!original_path.empty()) {
        const MatchScore score = match_and_score(
            res.images,
            match_channels(as_batch(load_image_file(original_path)), res.images.dim(1)));
        std::printf("psnr %s ssim %s\n", num_str(score.mean_psnr).c_str(),
                    num_str(score.mean_ssim).c_str());
    }
    return 0;
}

int run_probe_agr(const std::string& rule, int m, const std::vector<std::string>& files) {
    AgrConfig cfg;
    cfg.rule = agr_rule_from_name(rule);
    cfg.m = m;
    std::vector<GradientUpdate> updates;
    for (std::size_t i = 0; i < files.size(); ++i) {
        GradientUpdate g;
        g.client_id = int(i);
        g.values = load_gvt1(files[i]).values();
        g.buffer_delta = Vec();
        updates.push_back(std::move(g));
    }
    const AggregateResult res = aggregate(cfg, updates);
    std::printf("selected:");
    for (int id : res.selected) std::printf(" %d", id);
    std::printf("\naggregate:");
    for (Index i = 0; i < res.values.size(); ++i)
        std::printf(" %s", num_str(res.values[i]).c_str());
    std::printf("\n");
    if (!res.note.empty()) std::printf("note: %s\n", res.note.c_str());
    return 0;
}

int run_probe_prob(double n, double k, double clients, double selected, double effective) {
    const InversionProbabilities p =
        inversion_probabilities(n, k, clients, selected, effective);
    std::printf("p_target   %.6e\n", p.p_target);
    std::printf("p_best     %.6e\n", p.p_best);
    std::printf("p_best_agr %.6e\n", p.p_best_agr);
    return 0;
}

int run_probe_metric(const std::string& a_path, const std::string& b_path) {
    Tensor a = as_batch(load_image_file(a_path)), b = as_batch(load_image_file(b_path));
    if (a.rank() == 4 && b.rank() == 4) {
        const Index c = std::min(a.dim(1), b.dim(1));
        a = match_channels(a, c);
        b = match_channels(b, c);
    }
    std::printf("psnr %s\nssim %s\n", num_str(psnr(a, b)).c_str(),
                num_str(ssim(a, b)).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated poisoning & gradient-inversion laboratory"};
    app.require_subcommand(1);

    CommonArgs train_args, craft_args, poison_args, exp_args, invert_args, sweep_args;

    CLI::App* cmd_train = app.add_subcommand("train", "train the global model to convergence");
    add_common(cmd_train, train_args);
    CLI::App* cmd_craft = app.add_subcommand("craft", "train, then craft the malicious model");
    add_common(cmd_craft, craft_args);
    CLI::App* cmd_poison =
        app.add_subcommand("poison", "train, craft, and run the replacement campaign");
    add_common(cmd_poison, poison_args);
    CLI::App* cmd_exp = app.add_subcommand("experiment", "full pipeline incl. inversion");
    add_common(cmd_exp, exp_args);

    CLI::App* cmd_invert = app.add_subcommand("invert", "invert a saved aggregate");
    add_common(cmd_invert, invert_args);
    std::string inv_params, inv_delta, inv_original;
    cmd_invert->add_option("--params", inv_params, "model bundle prefix")->required();
    cmd_invert->add_option("--delta", inv_delta, "aggregate GVT1 file")->required();
    cmd_invert->add_option("--original", inv_original, "original image for scoring");

    CLI::App* cmd_sweep = app.add_subcommand("sweep", "run the experiment across an axis");
    add_common(cmd_sweep, sweep_args);
    std::string sweep_axis;
    std::vector<std::string> sweep_values;
    int sweep_seeds = 3, sweep_jobs = 1;
    cmd_sweep->add_option("--axis", sweep_axis,
                          "batch-size|client-count|loss-gap|knowledge|agr")
        ->required();
    cmd_sweep->add_option("--values", sweep_values, "axis values")->required()->delimiter(',');
    cmd_sweep->add_option("--seeds", sweep_seeds, "seed replicates per value");
    cmd_sweep->add_option("--jobs", sweep_jobs, "parallel runs");

    CLI::App* cmd_probe = app.add_subcommand("probe", "standalone checks");
    cmd_probe->require_subcommand(1);
    CLI::App* probe_agr = cmd_probe->add_subcommand("agr-audit", "aggregate GVT1 updates");
    std::string probe_rule = "mean";
    int probe_m = 0;
    std::vector<std::string> probe_files;
    probe_agr->add_option("--rule", probe_rule, "aggregation rule");
    probe_agr->add_option("--m", probe_m, "assumed malicious count");
    probe_agr->add_option("files", probe_files, "update files (GVT1)")->required();
    CLI::App* probe_prob = cmd_probe->add_subcommand("prob-calc", "probability table");
    double pn = 200, pk = 128, pN = 100, pS = 60, pEff = -1;
    probe_prob->add_option("--n", pn, "samples per client pool");
    probe_prob->add_option("--k", pk, "batch size");
    probe_prob->add_option("--clients", pN, "clients per round");
    probe_prob->add_option("--selected", pS, "selected-set size");
    probe_prob->add_option("--effective", pEff, "effective client count (optional)");
    CLI::App* probe_metric = cmd_probe->add_subcommand("metric", "psnr/ssim of two images");
    std::string ma, mb;
    probe_metric->add_option("a", ma, "first image (.ppm or .gvt1)")->required();
    probe_metric->add_option("b", mb, "second image (.ppm or .gvt1)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) {
            run_experiment(load_config(train_args), train_args.out_dir, RunStage::train);
            std::printf("trained; artifacts in %s\n", train_args.out_dir.c_str());
        } else if (cmd_craft->parsed()) {
            run_experiment(load_config(craft_args), craft_args.out_dir, RunStage::craft);
            std::printf("crafted; artifacts in %s\n", craft_args.out_dir.c_str());
        } else if (cmd_poison->parsed()) {
            const ExperimentOutcome o =
                run_experiment(load_config(poison_args), poison_args.out_dir, RunStage::poison);
            std::printf("campaign: initial %s final %s success %s\n",
                        num_str(o.campaign_initial).c_str(), num_str(o.campaign_final).c_str(),
                        o.campaign_success ? "true" : "false");
        } else if (cmd_exp->parsed()) {
            const ExperimentOutcome o = run_experiment(load_config(exp_args), exp_args.out_dir);
            std::printf("psnr %s ssim %s lgap %s\n", num_str(o.psnr).c_str(),
                        num_str(o.ssim).c_str(), num_str(o.lgap).c_str());
        } else if (cmd_invert->parsed()) {
            return run_invert_files(invert_args, inv_params, inv_delta, inv_original);
        } else if (cmd_sweep->parsed()) {
            run_sweep(load_config(sweep_args), sweep_args.out_dir, sweep_axis, sweep_values,
                      sweep_seeds, sweep_jobs);
            std::printf("sweep written to %s/sweep.csv\n", sweep_args.out_dir.c_str());
        } else if (probe_agr->parsed()) {
            return run_probe_agr(probe_rule, probe_m, probe_files);
        } else if (probe_prob->parsed()) {
            return run_probe_prob(pn, pk, pN, pS, pEff);
        } else if (probe_metric->parsed()) {
            return run_probe_metric(ma, mb);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
