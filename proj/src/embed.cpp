// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/embed.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ulga {

using json = nlohmann::json;

void PlatformProfile::validate() const {
    if (name.empty()) throw ConfigError("platform: missing name");
    if (!(cpu_hz > 0) || !(flops_per_sec > 0) || !(drive_bytes > 0) || !(ram_bytes > 0))
        throw ConfigError("platform '" + name + "': cpu_hz, flops_per_sec, drive_bytes and ram_bytes must be positive");
}

std::vector<PlatformProfile> table1_platforms() {
    constexpr double K = 1024.0, M = K * 1024.0, G = M * 1024.0;
    return {
        {"ATMega1280", "Arduino", 16e6, 160e3, 128 * K, 8 * K},
        {"ATMega2560", "Arduino", 32e6, 320e3, 256 * K, 16 * K},
        {"RPi 1B", "Raspberry Pi", 700e6, 41e6, 256 * M, 512 * M},
        {"RPi 2B", "Raspberry Pi", 900e6, 53e6, 1 * G, 1 * G},
    };
}

std::vector<PlatformProfile> parse_platforms(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("platforms: invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("platforms") || !doc["platforms"].is_array())
        throw ConfigError("platforms: expected an object with a 'platforms' array");
    for (const auto& [key, _] : doc.items())
        if (key != "platforms" && key != "units") throw ConfigError("platforms: unknown key '" + key + "'");
    static const std::set<std::string> known = {"name", "family", "cpu_hz", "flops_per_sec", "drive_bytes",
                                                "ram_bytes"};
    std::vector<PlatformProfile> out;
    for (const auto& row : doc["platforms"]) {
        if (!row.is_object()) throw ConfigError("platforms: every entry must be an object");
        for (const auto& [key, _] : row.items())
            if (!known.count(key)) throw ConfigError("platforms: unknown key '" + key + "'");
        try {
            PlatformProfile p;
            p.name = row.at("name").get<std::string>();
            p.family = row.value("family", std::string{});
            p.cpu_hz = row.at("cpu_hz").get<double>();
            p.flops_per_sec = row.at("flops_per_sec").get<double>();
            p.drive_bytes = row.at("drive_bytes").get<double>();
            p.ram_bytes = row.at("ram_bytes").get<double>();
            p.validate();
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw ConfigError(std::string("platforms: ") + e.what());
        }
    }
    if (out.empty()) throw ConfigError("platforms: no platform listed");
    return out;
}

std::vector<PlatformProfile> load_platforms(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("platforms: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_platforms(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

std::uint64_t flops_per_step(const LayerSpec& s, std::size_t n_inputs) {
    const std::uint64_t in = s.n_in, out = s.n_out;
    switch (s.kind) {
        case LayerKind::linear: return 2 * in * out;
        case LayerKind::conv1d: return 2 * s.kernel * in * out;
        case LayerKind::gru: return 6 * out * (in + out) + 9 * out;
        case LayerKind::batchnorm1d: return 4 * out;
        case LayerKind::activation: return s.activation == Activation::identity ? 0 : out;
        case LayerKind::add: return out * (n_inputs - 1);
        case LayerKind::gate: return 3 * out;
    }
    throw ConfigError("flops: unknown layer kind");
}

std::uint64_t flops_per_step(const Network& net) {
    std::uint64_t total = 0;
    for (const auto& l : net.layers()) total += flops_per_step(l.spec, l.inputs.size());
    return total;
}

double count_flops(const Network& net, std::size_t samples_per_step, double sample_rate) {
    if (samples_per_step == 0 || !(sample_rate > 0)) throw ConfigError("flops: invalid step rate");
    return static_cast<double>(flops_per_step(net)) * sample_rate / static_cast<double>(samples_per_step);
}

double count_flops(const Network& net, const ModelConfig& cfg) {
    return count_flops(net, samples_per_step(cfg), cfg.sample_rate);
}

std::uint64_t disk_size(const Network& net) { return serialize(net).size(); }

std::uint64_t rw_accesses_per_step(const LayerSpec& s, std::size_t n_inputs) {
    const std::uint64_t in = s.n_in, out = s.n_out;
    switch (s.kind) {
        // weights + bias + inputs + outputs
        case LayerKind::linear: return in * out + out + in + out;
        case LayerKind::conv1d: return s.kernel * in * out + out + s.kernel * in + out;
        // three gates of weights and biases, input and previous state, output
        case LayerKind::gru: return 3 * out * (in + out) + 3 * out + in + out + out;
        // gamma, beta, mean, scale; input; output
        case LayerKind::batchnorm1d: return 4 * out + out + out;
        case LayerKind::activation: return 2 * out;
        case LayerKind::add: return n_inputs * out + out;
        case LayerKind::gate: return 2 * out + out;
    }
    throw ConfigError("memory: unknown layer kind");
}

std::uint64_t rw_accesses_per_step(const Network& net) {
    std::uint64_t total = 0;
    for (const auto& l : net.layers()) total += rw_accesses_per_step(l.spec, l.inputs.size());
    return total;
}

double rw_memory(const Network& net, std::size_t samples_per_step) {
    if (samples_per_step == 0) throw ConfigError("memory: samples_per_step must be positive");
    return static_cast<double>(rw_accesses_per_step(net)) / static_cast<double>(samples_per_step);
}

double rw_memory(const Network& net, const ModelConfig& cfg) { return rw_memory(net, samples_per_step(cfg)); }

std::uint64_t working_set_bytes(const Network& net) {
    std::uint64_t floats = 0;
    for (const auto& l : net.layers())
        for (const auto& p : l.params) floats += p.value.numel();
    const auto& layers = net.layers();
    for (const auto& l : layers) {
        if (l.spec.kind == LayerKind::conv1d) floats += (l.spec.kernel - 1) * l.spec.dilation * l.spec.n_in;
        if (l.spec.kind == LayerKind::gru) floats += l.spec.n_out;
    }
    // last_use[j]: index of the last node reading node j (the input is -1 -> slot 0).
    const std::size_t n = layers.size();
    std::vector<std::size_t> last_use(n + 1, 0);
    bool input_used = false;
    std::size_t input_last = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (int src : layers[i].inputs) {
            if (src == kNetworkInput) {
                input_used = true;
                input_last = i;
            } else {
                last_use[static_cast<std::size_t>(src)] = std::max(last_use[static_cast<std::size_t>(src)], i);
            }
        }
    std::uint64_t peak = net.input_channels();
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t live = layers[i].spec.n_out;
        if (input_used && input_last >= i) live += net.input_channels();
        for (std::size_t j = 0; j < i; ++j)
            if (last_use[j] >= i) live += layers[j].spec.n_out;
        peak = std::max(peak, live);
    }
    return 4 * (floats + peak);
}

ModelCosts measure_costs(const Network& net, const ModelConfig& cfg, double error_multiplier) {
    ModelCosts c;
    c.flops_per_audio_second = count_flops(net, cfg);
    c.disk_bytes = disk_size(net);
    c.rw_accesses_per_sample = rw_memory(net, cfg);
    c.working_set_bytes = working_set_bytes(net);
    c.error_multiplier = error_multiplier;
    return c;
}

EmbedVerdict feasibility(const ModelCosts& costs, const PlatformProfile& profile) {
    EmbedVerdict v;
    v.platform = profile.name;
    v.realtime_ok = costs.flops_per_audio_second <= profile.flops_per_sec;
    v.embeddable_ok = static_cast<double>(costs.disk_bytes) <= profile.drive_bytes &&
                      static_cast<double>(costs.working_set_bytes) <= profile.ram_bytes;
    return v;
}

EmbedReport embed_report(const ModelCosts& costs, const std::vector<PlatformProfile>& platforms) {
    EmbedReport r;
    r.costs = costs;
    for (const auto& p : platforms) r.verdicts.push_back(feasibility(costs, p));
    return r;
}

void write_embed_csv(std::ostream& os, const EmbedReport& r) {
    os << "platform,flops_per_audio_second,disk_bytes,rw_accesses_per_sample,working_set_bytes,error_multiplier,"
          "realtime_ok,embeddable_ok\n";
    char buf[256];
    for (const auto& v : r.verdicts) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%llu,%.9g,%llu,%.9g,%d,%d\n", v.platform.c_str(),
                      r.costs.flops_per_audio_second, static_cast<unsigned long long>(r.costs.disk_bytes),
                      r.costs.rw_accesses_per_sample, static_cast<unsigned long long>(r.costs.working_set_bytes),
                      r.costs.error_multiplier, v.realtime_ok ? 1 : 0, v.embeddable_ok ? 1 : 0);
        os << buf;
    }
}

void write_embed_summary(std::ostream& os, const EmbedReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "FLOPs per audio second: %.6g\nDisk size: %llu bytes\nMemory accesses per sample: %.6g\n"
                  "Working set: %llu bytes\nError multiplier: %.4f\n",
                  r.costs.flops_per_audio_second, static_cast<unsigned long long>(r.costs.disk_bytes),
                  r.costs.rw_accesses_per_sample, static_cast<unsigned long long>(r.costs.working_set_bytes),
                  r.costs.error_multiplier);
    os << buf;
    for (const auto& v : r.verdicts) {
        std::snprintf(buf, sizeof buf, "  %-12s real-time: %-3s embeddable: %s\n", v.platform.c_str(),
                      v.realtime_ok ? "yes" : "no", v.embeddable_ok ? "yes" : "no");
        os << buf;
    }
}

std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points) {
    std::vector<ParetoPoint> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        bool dominated = false, duplicate = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            if (i == j) continue;
            const auto& q = points[j];
            if (q.error == p.error && q.cost == p.cost) {
                duplicate = duplicate || j < i;
                continue;
            }
            dominated = q.error <= p.error && q.cost <= p.cost;
        }
        if (!dominated && !duplicate) out.push_back(p);
    }
    std::stable_sort(out.begin(), out.end(), [](const ParetoPoint& a, const ParetoPoint& b) { return a.cost < b.cost; });
    return out;
}

}  // namespace ulga
