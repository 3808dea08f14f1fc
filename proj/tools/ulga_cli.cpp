// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Command line front end: train, imp, analyze, embed-check, gen-data, synth.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ulga/harness.hpp"

namespace fs = std::filesystem;
using namespace ulga;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct RunOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig load_config(const RunOptions& o) {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
    return cfg;
}

void add_run_options(CLI::App* cmd, RunOptions& o, bool need_config) {
    auto* c = cmd->add_option("--config", o.config, "Experiment configuration (JSON)");
    if (need_config) c->required();
    cmd->add_option("--seed", o.seed, "Seed overriding the configuration");
    cmd->add_option("--out", o.out, "Output directory overriding the configuration");
}

int cmd_train(const RunOptions& o) {
    const ExperimentConfig cfg = load_config(o);
    const DataSplit data = prepare_data(cfg);
    Network net = build(cfg.model, cfg.seed);
    TrainConfig tc = cfg.imp.train;
    tc.seed = mix_seed(cfg.seed, 1);
    const TrainResult r = train_model(net, cfg.model, data, tc);
    const double test = evaluate(net, cfg.model, data.test, tc.batch_size);
    fs::create_directories(cfg.output_dir);
    const fs::path ckpt = fs::path(cfg.output_dir) / "model.ulga";
    save(net, ckpt.string());
    std::printf("epochs %zu, steps %zu, best validation loss %.6g, test loss %.6g\nwrote %s\n", r.epochs, r.steps,
                r.best_valid_loss, test, ckpt.c_str());
    return 0;
}

int cmd_imp(const RunOptions& o) {
    const ExperimentConfig cfg = load_config(o);
    const ExperimentResult r = run_experiment(cfg);
    std::ostringstream os;
    write_trace_csv(os, r.trace);
    std::cout << os.str();
    if (!r.trace.stop_reason.empty()) std::cout << "stopped: " << r.trace.stop_reason << "\n";
    std::cout << "artifacts in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_analyze(const RunOptions& o, const std::string& model, const std::string& criterion,
                const std::string& scaling) {
    const ExperimentConfig cfg = load_config(o);
    Network net = load(model);
    const ModelConfig mc = model_config_from(net);
    const DataSplit data = prepare_data(cfg);
    ScoringSet set;
    for (std::size_t start = 0; start < data.valid.size(); start += cfg.imp.train.batch_size) {
        std::vector<const AudioExample*> batch;
        for (std::size_t j = start; j < std::min(data.valid.size(), start + cfg.imp.train.batch_size); ++j)
            batch.push_back(&data.valid[j]);
        set.push_back(scoring_batch(mc, make_batch(mc, batch)));
    }
    CriteriaOptions co = cfg.imp.criteria;
    co.seed = mix_seed(cfg.seed, 4);
    const ScoreTable scores = score_network(net, criterion_from_string(criterion), set, scaling_from_string(scaling), co);
    fs::create_directories(cfg.output_dir);
    const fs::path csv = fs::path(cfg.output_dir) / "scores.csv";
    std::ofstream out(csv);
    write_scores_csv(out, scores);
    std::printf("scored %zu units with %s (%s scaling)\n", scores.size(), criterion.c_str(), scaling.c_str());
    const double p = net.mask() ? prunability_from_mask(net, *net.mask()) : 0.0;
    std::printf("masked weights: %zu of %zu, physically removable units: %.4f\nwrote %s\n",
                static_cast<std::size_t>(net.weight_count() - live_weight_count(net)), net.weight_count(), p,
                csv.c_str());
    return 0;
}

int cmd_embed(const std::string& model, const std::string& platforms, const std::string& out) {
    const Network net = load(model);
    const ModelConfig mc = model_config_from(net);
    const auto profiles = platforms.empty() ? table1_platforms() : load_platforms(platforms);
    const EmbedReport r = embed_report(measure_costs(net, mc, 1.0), profiles);
    write_embed_summary(std::cout, r);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw ConfigError("cannot write '" + out + "'");
        write_embed_csv(f, r);
    }
    return 0;
}

int cmd_gen_data(const std::string& out, std::size_t n, double sr, double duration, std::uint64_t seed) {
    const auto items = gen_synthetic_tones(n, sr, duration, seed);
    fs::create_directories(out);
    std::ofstream cond(fs::path(out) / "conditioning.csv");
    cond << "file,frame,f0_hz,loudness\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "tone_%04zu.wav", i);
        write_wav((fs::path(out) / name).string(), items[i].wave, static_cast<std::uint32_t>(sr));
        for (std::size_t f = 0; f < items[i].f0.size(); ++f) cond << name << "," << f << "," << items[i].f0[f] << ","
                                                                  << items[i].loudness[f] << "\n";
    }
    std::printf("wrote %zu items to %s\n", items.size(), out.c_str());
    return 0;
}

int cmd_synth(const std::string& model, const std::string& out, double f0, double loudness, double seconds,
              std::uint64_t seed) {
    const Network net = load(model);
    const ModelConfig mc = model_config_from(net);
    const auto length = static_cast<std::size_t>(std::llround(seconds * mc.sample_rate));
    if (length == 0) throw ConfigError("synth: duration too short");
    AudioExample cond;
    cond.hop = mc.frame_hop;
    const std::size_t frames = (length - 1) / cond.hop + 1;
    cond.f0.assign(frames, static_cast<float>(f0));
    cond.loudness.assign(frames, static_cast<float>(loudness));
    GenerateOptions go;
    go.seed = seed;
    const Tensor wave = generate(net, mc, cond, length, go);
    write_wav(out, wave.data(), static_cast<std::uint32_t>(std::lround(mc.sample_rate)));
    std::printf("wrote %zu samples to %s\n", length, out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structured lottery-ticket pruning of small generative audio networks"};
    app.require_subcommand(1);

    RunOptions train_o, imp_o, analyze_o;
    auto* train = app.add_subcommand("train", "Train a dense model");
    add_run_options(train, train_o, true);
    auto* imp = app.add_subcommand("imp", "Run iterative pruning and write all artifacts");
    add_run_options(imp, imp_o, true);

    auto* analyze = app.add_subcommand("analyze", "Score units of a checkpoint and report prunability");
    add_run_options(analyze, analyze_o, false);
    std::string analyze_model, criterion = "magnitude", scaling = "none";
    analyze->add_option("--model", analyze_model, "Checkpoint")->required();
    analyze->add_option("--criterion", criterion, "magnitude|gradient|activation|normalization|information");
    analyze->add_option("--scaling", scaling, "none|layer_max|fan_scaled");

    auto* embed = app.add_subcommand("embed-check", "Report costs and platform feasibility of a checkpoint");
    std::string embed_model, platforms, embed_out;
    embed->add_option("--model", embed_model, "Checkpoint")->required();
    embed->add_option("--platforms", platforms, "Platform profile file (JSON)");
    embed->add_option("--out", embed_out, "CSV report path");

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic tone dataset as WAV files");
    std::string gen_out = "tones";
    std::size_t gen_n = 40;
    double gen_sr = 16000, gen_duration = 0.5;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--n", gen_n, "Number of items");
    gen->add_option("--sr", gen_sr, "Sample rate (8000 or 16000)");
    gen->add_option("--duration", gen_duration, "Seconds per item");
    gen->add_option("--seed", gen_seed, "Seed");

    auto* synth = app.add_subcommand("synth", "Generate audio from a checkpoint");
    std::string synth_model, synth_out = "out.wav";
    double f0 = 220.0, loudness = 0.3, seconds = 1.0;
    std::uint64_t synth_seed = 0;
    synth->add_option("--model", synth_model, "Checkpoint")->required();
    synth->add_option("--out", synth_out, "WAV path");
    synth->add_option("--f0", f0, "Fundamental frequency in Hz");
    synth->add_option("--loudness", loudness, "Linear loudness");
    synth->add_option("--duration", seconds, "Seconds");
    synth->add_option("--seed", synth_seed, "Sampling seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*train) return cmd_train(train_o);
        if (*imp) return cmd_imp(imp_o);
        if (*analyze) return cmd_analyze(analyze_o, analyze_model, criterion, scaling);
        if (*embed) return cmd_embed(embed_model, platforms, embed_out);
        if (*gen) return cmd_gen_data(gen_out, gen_n, gen_sr, gen_duration, gen_seed);
        if (*synth) return cmd_synth(synth_model, synth_out, f0, loudness, seconds, synth_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}
