// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Datasets, WAV files, experiment configuration and the experiment runner.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulga/embed.hpp"
#include "ulga/models.hpp"
#include "ulga/pruning.hpp"

namespace ulga {

// --- datasets -----------------------------------------------------------------

/// Harmonic plus noise tones with random f0 in [80, 800] Hz (log-uniform),
/// 1 to 16 partials decaying as 1/k with +-20% jitter, an attack/decay
/// loudness envelope and a low-passed noise floor. Each item carries its f0
/// and loudness per `hop` samples. Item i depends only on (seed, i).
std::vector<AudioExample> gen_synthetic_tones(std::size_t n_items, double sample_rate, double duration,
                                              std::uint64_t seed, std::size_t hop = 64);

/// Shuffle with `seed`, then train round(0.8 n), valid round(0.1 n), test the
/// rest. Throws ConfigError when a part would be empty.
DataSplit split_dataset(std::vector<AudioExample> items, std::uint64_t seed);

/// Consecutive pieces of `length` samples (a multiple of the items' hop) with
/// their conditioning. Remainders shorter than `length` are dropped.
std::vector<AudioExample> segment(const std::vector<AudioExample>& items, std::size_t length);

/// Frame loudness (RMS * sqrt 2) and autocorrelation f0 in [60, 1000] Hz per
/// `hop` samples. Unvoiced frames take the nearest voiced estimate.
void estimate_conditioning(AudioExample& ex, double sample_rate);

// --- WAV ----------------------------------------------------------------------

struct WavData {
    std::vector<float> samples;
    std::uint32_t sample_rate = 0;
};

/// PCM 16-bit mono. Samples are clamped to [-1, 1) and stored as
/// round(x * 32768).
void write_wav(const std::string& path, std::span<const float> samples, std::uint32_t sample_rate);
/// Samples scaled by 1/32768. Throws FormatError for anything but RIFF/WAVE
/// PCM 16-bit mono, and for truncated payloads.
WavData read_wav(const std::string& path);
/// Every *.wav in `dir` in name order, with estimated conditioning.
std::vector<AudioExample> load_wav_dir(const std::string& dir, std::uint32_t sample_rate, std::size_t hop = 64);

// --- configuration ------------------------------------------------------------

struct DatasetConfig {
    std::string source = "synthetic_tones";  // or "wav_dir"
    std::size_t n_items = 40;
    double duration = 0.5;  // seconds per synthetic item
    std::string path;       // wav_dir
    double segment_seconds = 0.5;
    std::optional<std::uint64_t> seed;
};

struct AudioOutputConfig {
    std::vector<std::size_t> iterations = {0};
    bool last = true;
    double seconds = 0.5;
};

struct ExperimentConfig {
    ModelConfig model = ModelConfig::desk(ModelKind::tiny_ddsp);
    DatasetConfig dataset;
    ImpConfig imp;
    std::string platforms;  // profile file; empty for the built-in table
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    bool compare_modes = false;
    AudioOutputConfig audio;

    void validate() const;
};

/// Strict parser: unknown keys, wrong types and invalid values throw
/// ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
/// Canonical JSON of every field.
std::string experiment_config_json(const ExperimentConfig& cfg);

/// Dataset of the experiment, split with the experiment seed.
DataSplit prepare_data(const ExperimentConfig& cfg);
std::vector<PlatformProfile> experiment_platforms(const ExperimentConfig& cfg);

// --- experiments --------------------------------------------------------------

struct ExperimentResult {
    ImpTrace trace;
    ImpTrace paired;  // the mask-mode run when modes are compared
    std::vector<std::string> artifacts;
};

/// Dense baseline and IMP per the configuration. Writes trace.csv,
/// pareto.csv, checkpoints/, embed/, audio/ and MANIFEST under output_dir
/// (mask/ and trim/ subdirectories plus comparison.csv when comparing modes).
/// On failure MANIFEST records the partial state before rethrowing.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Columns: iteration, test_error_multiplier, flops_per_second_audio,
/// disk_bytes, on_front.
void write_pareto_csv(std::ostream& os, const ImpTrace& trace);

}  // namespace ulga
