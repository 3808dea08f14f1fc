// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Static inference cost model and platform feasibility.
//
// FLOPs count one multiply-accumulate as two operations. Memory accesses
// count every scalar weight read once per invocation, every input value read
// once by each consumer and every output value written once.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ulga/models.hpp"
#include "ulga/nn.hpp"

namespace ulga {

struct PlatformProfile {
    std::string name;
    std::string family;
    double cpu_hz = 0;
    double flops_per_sec = 0;
    double drive_bytes = 0;
    double ram_bytes = 0;

    void validate() const;
};

/// The four rows of the reference platform table.
std::vector<PlatformProfile> table1_platforms();
std::vector<PlatformProfile> parse_platforms(const std::string& json_text);
std::vector<PlatformProfile> load_platforms(const std::string& path);

/// Closed-form operations for one network step.
std::uint64_t flops_per_step(const Network& net);
std::uint64_t flops_per_step(const LayerSpec& spec, std::size_t n_inputs = 1);
/// Operations per second of generated audio.
double count_flops(const Network& net, std::size_t samples_per_step, double sample_rate);
double count_flops(const Network& net, const ModelConfig& cfg);

/// Byte length of the serialized checkpoint.
std::uint64_t disk_size(const Network& net);

std::uint64_t rw_accesses_per_step(const Network& net);
std::uint64_t rw_accesses_per_step(const LayerSpec& spec, std::size_t n_inputs = 1);
/// Accesses per generated audio sample.
double rw_memory(const Network& net, std::size_t samples_per_step);
double rw_memory(const Network& net, const ModelConfig& cfg);

/// Parameters plus streaming state plus the peak of simultaneously live
/// activations under sequential layer execution, in bytes (f32).
std::uint64_t working_set_bytes(const Network& net);

struct ModelCosts {
    double flops_per_audio_second = 0;
    std::uint64_t disk_bytes = 0;
    double rw_accesses_per_sample = 0;
    std::uint64_t working_set_bytes = 0;
    double error_multiplier = 1.0;
};

ModelCosts measure_costs(const Network& net, const ModelConfig& cfg, double error_multiplier = 1.0);

struct EmbedVerdict {
    std::string platform;
    bool realtime_ok = false;
    bool embeddable_ok = false;
};

/// realtime: flops <= platform FLOPS; embeddable: disk <= drive and working
/// set <= RAM.
EmbedVerdict feasibility(const ModelCosts& costs, const PlatformProfile& profile);

struct EmbedReport {
    ModelCosts costs;
    std::vector<EmbedVerdict> verdicts;
};

EmbedReport embed_report(const ModelCosts& costs, const std::vector<PlatformProfile>& platforms);
void write_embed_csv(std::ostream& os, const EmbedReport& report);
void write_embed_summary(std::ostream& os, const EmbedReport& report);

struct ParetoPoint {
    double error = 0;
    double cost = 0;
    std::size_t tag = 0;
};

/// Non-dominated points (minimize both), ordered by cost; duplicates keep the
/// first occurrence.
std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points);

}  // namespace ulga
