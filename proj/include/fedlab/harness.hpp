#pragma once

// Experiment orchestration: a Config becomes a fully-resolved setup, the
// canonical pipeline (train -> craft -> campaign -> targeted round -> recover
// -> invert -> score) runs inside one output directory, and sweeps fan the
// pipeline out over an axis. Every run ends with a manifest listing its
// configuration, stage wall-times, and content digests of every output file.

#include "fedlab/attack.hpp"
#include "fedlab/config.hpp"
#include "fedlab/inversion.hpp"

namespace fedlab {

const char* knowledge_name(Knowledge k);
Knowledge knowledge_from_name(const std::string& name);

struct ExperimentSetup {
    DataSpec data;
    ModelSpec model;
    FlConfig fl;
    AgrConfig agr;
    int malicious = 2;

    int train_rounds = 300;
    double converge_eps = 0.0;
    int converge_window = 10;

    bool attack_enabled = true;
    Knowledge knowledge = Knowledge::semi;
    double semi_fraction = 0.5;
    double ascent_scale = 1.0; // multiplies the loss-raising craft rate
    AttackPlan plan;

    InversionTask inversion; // template: spec/params/delta_agr filled per run

    std::uint64_t seed = 1;
};

ExperimentSetup build_setup(const Config& cfg);

struct ExperimentOutcome {
    bool attack = false;
    double psnr = 0.0, ssim = 0.0, lgap = 0.0;
    double targeted_acc = -1.0, main_acc = -1.0;
    double campaign_initial = -1.0, campaign_final = -1.0;
    bool campaign_success = false;
};

// How far down the pipeline to run; the CLI's train/craft/poison subcommands
// are prefixes of the full experiment.
enum class RunStage { train, craft, poison, full };

// Runs the pipeline under out_dir and writes metrics.csv, trace CSVs, model
// bundles, PPM images, the aggregation audit, and manifest.json.
ExperimentOutcome run_experiment(const Config& cfg, const std::string& out_dir,
                                 RunStage stop = RunStage::full);

// Axis in {batch-size, client-count, loss-gap, knowledge, agr}. Runs
// run_experiment per (value, seed replicate) into subdirectories and writes
// sweep.csv (axis,value,seed,psnr,ssim,lgap). jobs > 1 fans runs out across
// threads; each run owns its subdirectory.
void run_sweep(const Config& cfg, const std::string& out_dir, const std::string& axis,
               const std::vector<std::string>& values, int seeds_per_value, int jobs = 1);

} // namespace fedlab
