// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/harness.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ulga {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Datasets

std::vector<AudioExample> gen_synthetic_tones(std::size_t n_items, double sample_rate, double duration,
                                              std::uint64_t seed, std::size_t hop) {
    if (sample_rate != 8000.0 && sample_rate != 16000.0)
        throw ConfigError("synthetic tones: sample rate must be 8000 or 16000, got " + std::to_string(sample_rate));
    if (!(duration >= 0.25)) throw ConfigError("synthetic tones: duration must be at least 0.25 s");
    if (hop == 0) throw ConfigError("synthetic tones: hop must be positive");
    const auto length = static_cast<std::size_t>(std::llround(duration * sample_rate));
    const std::size_t frames = (length - 1) / hop + 1;
    constexpr std::size_t kBands = 16;
    std::vector<AudioExample> items;
    items.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
        Rng rng(mix_seed(seed, i));
        const double f0 = 80.0 * std::pow(10.0, rng.uniform());
        const std::size_t partials = 1 + rng.below(16);
        std::vector<float> amps(partials, 0.0f);
        double total = 0.0;
        for (std::size_t k = 1; k <= partials; ++k) {
            const double a = rng.uniform(0.8, 1.2) / static_cast<double>(k);
            if (static_cast<double>(k) * f0 < 0.5 * sample_rate) {
                amps[k - 1] = static_cast<float>(a);
                total += a;
            }
        }
        for (auto& a : amps) a = static_cast<float>(a / total);
        const double peak = rng.uniform(0.2, 0.6);
        const double attack = rng.uniform(0.01, 0.05);
        const double decay = rng.uniform(0.3, 2.0);
        const double floor_level = rng.uniform(0.002, 0.01);

        HarmonicNoiseParams p;
        p.n_partials = partials;
        p.n_bands = kBands;
        p.hop = hop;
        p.noise_seed = mix_seed(seed, i + (std::uint64_t{1} << 32));
        p.f0.assign(frames, static_cast<float>(f0));
        p.loudness.resize(frames);
        for (std::size_t f = 0; f < frames; ++f) {
            const double t = static_cast<double>(f * hop) / sample_rate;
            p.loudness[f] = static_cast<float>(peak * std::min(1.0, t / attack) * std::exp(-std::max(0.0, t - attack) / decay));
        }
        p.harmonic_amps.resize(frames * partials);
        for (std::size_t f = 0; f < frames; ++f) std::copy(amps.begin(), amps.end(), p.harmonic_amps.begin() + f * partials);
        p.noise_filter.resize(frames * kBands);
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t b = 0; b < kBands; ++b)
                p.noise_filter[f * kBands + b] = static_cast<float>(floor_level * std::exp(-3.0 * b / kBands));

        AudioExample ex;
        const Tensor wave = synthesize_harmonic_noise(p, sample_rate, length);
        ex.wave.assign(wave.data().begin(), wave.data().end());
        ex.f0 = p.f0;
        ex.loudness = p.loudness;
        ex.hop = hop;
        items.push_back(std::move(ex));
    }
    return items;
}

DataSplit split_dataset(std::vector<AudioExample> items, std::uint64_t seed) {
    const std::size_t n = items.size();
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    const auto n_valid = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    if (n == 0 || n_train == 0 || n_valid == 0 || n_train + n_valid >= n)
        throw ConfigError("split: " + std::to_string(n) + " item(s) cannot fill train, validation and test");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    DataSplit d;
    for (std::size_t j = 0; j < n; ++j) {
        auto& part = j < n_train ? d.train : j < n_train + n_valid ? d.valid : d.test;
        part.push_back(std::move(items[order[j]]));
    }
    return d;
}

std::vector<AudioExample> segment(const std::vector<AudioExample>& items, std::size_t length) {
    std::vector<AudioExample> out;
    for (const auto& ex : items) {
        if (ex.hop == 0 || length == 0 || length % ex.hop != 0)
            throw ConfigError("segment: length must be a positive multiple of the hop");
        const std::size_t step_frames = length / ex.hop;
        const std::size_t frames = (length - 1) / ex.hop + 1;
        for (std::size_t start = 0; start + length <= ex.wave.size(); start += length) {
            AudioExample s;
            s.hop = ex.hop;
            s.wave.assign(ex.wave.begin() + static_cast<std::ptrdiff_t>(start),
                          ex.wave.begin() + static_cast<std::ptrdiff_t>(start + length));
            const std::size_t f0_frame = (start / length) * step_frames;
            for (std::size_t f = 0; f < frames; ++f) {
                const std::size_t src = std::min(f0_frame + f, ex.f0.empty() ? 0 : ex.f0.size() - 1);
                if (!ex.f0.empty()) s.f0.push_back(ex.f0[src]);
                if (!ex.loudness.empty()) s.loudness.push_back(ex.loudness[std::min(src, ex.loudness.size() - 1)]);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

void estimate_conditioning(AudioExample& ex, double sample_rate) {
    if (ex.hop == 0) throw ConfigError("conditioning: hop must be positive");
    const std::size_t n = ex.wave.size();
    if (n == 0) throw ConfigError("conditioning: empty waveform");
    const std::size_t frames = (n - 1) / ex.hop + 1;
    const auto min_lag = static_cast<std::size_t>(std::floor(sample_rate / 1000.0));
    const auto max_lag = static_cast<std::size_t>(std::ceil(sample_rate / 60.0));
    const std::size_t window = 2 * max_lag;
    ex.f0.assign(frames, 0.0f);
    ex.loudness.assign(frames, 0.0f);
    std::vector<bool> voiced(frames, false);
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t centre = f * ex.hop;
        const std::size_t lo = centre > window / 2 ? centre - window / 2 : 0;
        const std::size_t hi = std::min(n, lo + window);
        double energy = 0.0;
        for (std::size_t t = lo; t < std::min(n, lo + ex.hop); ++t) energy += double(ex.wave[t]) * ex.wave[t];
        const std::size_t count = std::min(n, lo + ex.hop) - lo;
        ex.loudness[f] = static_cast<float>(std::sqrt(2.0 * energy / static_cast<double>(std::max<std::size_t>(1, count))));
        if (hi - lo <= max_lag + 1) continue;
        std::vector<double> r(max_lag + 1, 0.0);
        double best = 0.0;
        for (std::size_t lag = std::max<std::size_t>(1, min_lag); lag <= max_lag; ++lag) {
            double xy = 0.0, xx = 0.0, yy = 0.0;
            for (std::size_t t = lo; t + lag < hi; ++t) {
                xy += double(ex.wave[t]) * ex.wave[t + lag];
                xx += double(ex.wave[t]) * ex.wave[t];
                yy += double(ex.wave[t + lag]) * ex.wave[t + lag];
            }
            r[lag] = xx > 1e-12 && yy > 1e-12 ? xy / std::sqrt(xx * yy) : 0.0;
            best = std::max(best, r[lag]);
        }
        if (best < 0.5) continue;
        for (std::size_t lag = std::max<std::size_t>(2, min_lag); lag < max_lag; ++lag)
            if (r[lag] >= 0.85 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
                ex.f0[f] = static_cast<float>(sample_rate / static_cast<double>(lag));
                voiced[f] = true;
                break;
            }
    }
    // Unvoiced frames copy the nearest voiced frame, or 110 Hz if none is.
    for (std::size_t f = 0; f < frames; ++f) {
        if (voiced[f]) continue;
        float v = 110.0f;
        for (std::size_t d = 1; d < frames; ++d) {
            if (f >= d && voiced[f - d]) {
                v = ex.f0[f - d];
                break;
            }
            if (f + d < frames && voiced[f + d]) {
                v = ex.f0[f + d];
                break;
            }
        }
        ex.f0[f] = v;
    }
}

// ---------------------------------------------------------------------------
// WAV

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

}  // namespace

void write_wav(const std::string& path, std::span<const float> samples, std::uint32_t sample_rate) {
    if (sample_rate == 0) throw ConfigError("wav: sample rate must be positive");
    const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    std::vector<std::uint8_t> b;
    b.reserve(44 + data_bytes);
    for (char c : std::string("RIFF")) b.push_back(static_cast<std::uint8_t>(c));
    put_u32(b, 36 + data_bytes);
    for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<std::uint8_t>(c));
    put_u32(b, 16);
    put_u16(b, 1);
    put_u16(b, 1);
    put_u32(b, sample_rate);
    put_u32(b, sample_rate * 2);
    put_u16(b, 2);
    put_u16(b, 16);
    for (char c : std::string("data")) b.push_back(static_cast<std::uint8_t>(c));
    put_u32(b, data_bytes);
    for (float x : samples) {
        const double v = std::isfinite(x) ? std::clamp(static_cast<double>(x), -1.0, 1.0) : 0.0;
        const long q = std::clamp(std::lround(v * 32768.0), -32768L, 32767L);
        put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("wav: cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out) throw ConfigError("wav: write failed for '" + path + "'");
}

WavData read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("wav: cannot open '" + path + "'");
    std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& why) { return FormatError("wav '" + path + "': " + why); };
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw fail("malformed RIFF header");
    bool have_fmt = false;
    WavData w;
    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const std::uint32_t size = get_u32(b.data() + pos + 4);
        const std::uint8_t* body = b.data() + pos + 8;
        const std::size_t avail = b.size() - pos - 8;
        if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
            if (size < 16 || avail < 16) throw fail("malformed fmt chunk");
            const std::uint16_t format = get_u16(body), channels = get_u16(body + 2), bits = get_u16(body + 14);
            if (format != 1) throw fail("unsupported encoding (format tag " + std::to_string(format) + ", need PCM)");
            if (channels != 1) throw fail("unsupported channel count " + std::to_string(channels) + " (need mono)");
            if (bits != 16) throw fail("unsupported sample width " + std::to_string(bits) + " bits (need 16)");
            w.sample_rate = get_u32(body + 4);
            have_fmt = true;
        } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
            if (!have_fmt) throw fail("data chunk before fmt chunk");
            if (size > avail)
                throw fail("truncated: header declares " + std::to_string(size) + " data bytes, file holds " +
                           std::to_string(avail));
            if (size % 2 != 0) throw fail("odd data size for 16-bit samples");
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i)
                w.samples[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(body + 2 * i))) / 32768.0f;
            return w;
        }
        if (size > avail) throw fail("truncated chunk");
        pos += 8 + size + (size & 1);
    }
    throw fail(have_fmt ? "no data chunk" : "no fmt chunk");
}

std::vector<AudioExample> load_wav_dir(const std::string& dir, std::uint32_t sample_rate, std::size_t hop) {
    if (!fs::is_directory(dir)) throw ConfigError("wav directory '" + dir + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".wav") files.push_back(e.path());
    }
    if (files.empty()) throw ConfigError("wav directory '" + dir + "' holds no .wav files");
    std::sort(files.begin(), files.end());
    std::vector<AudioExample> items;
    for (const auto& f : files) {
        WavData w = read_wav(f.string());
        if (w.sample_rate != sample_rate)
            throw FormatError("wav '" + f.string() + "': sample rate " + std::to_string(w.sample_rate) +
                              " Hz, expected " + std::to_string(sample_rate));
        if (w.samples.empty()) throw FormatError("wav '" + f.string() + "': no samples");
        AudioExample ex;
        ex.wave = std::move(w.samples);
        ex.hop = hop;
        estimate_conditioning(ex, sample_rate);
        items.push_back(std::move(ex));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Reads the keys of one JSON object and rejects the ones nobody read.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }
    const json& at(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }
    std::string path(const char* key) const { return name_ + "." + key; }

    void read(const char* key, std::size_t& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned()) throw ConfigError(path(key) + ": expected a nonnegative integer");
        out = v.get<std::size_t>();
    }
    void read(const char* key, std::uint64_t& out, int) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned()) throw ConfigError(path(key) + ": expected a nonnegative integer");
        out = v.get<std::uint64_t>();
    }
    void read(const char* key, int& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
        out = v.get<int>();
    }
    void read(const char* key, double& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
        out = v.get<double>();
    }
    void read(const char* key, bool& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
        out = v.get<bool>();
    }
    void read(const char* key, std::string& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
        out = v.get<std::string>();
    }
    template <class T>
    void read_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        if constexpr (std::is_same_v<T, std::uint64_t>) {
            read(key, v, 0);
        } else {
            read(key, v);
        }
        out = v;
    }
    template <class F>
    void read_enum(const char* key, F parse) {
        std::string s;
        read(key, s);
        if (!has(key)) return;
        try {
            parse(s);
        } catch (const ConfigError& e) {
            throw ConfigError(path(key) + ": " + e.what());
        }
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) throw ConfigError(name_ + ": unknown key '" + key + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void read_model(const json& j, ModelConfig& m) {
    Section s(j, "model");
    std::string kind = to_string(m.kind), preset = "desk";
    s.read("kind", kind);
    s.read("preset", preset);
    const ModelKind k = model_kind_from_string(kind);
    if (preset == "desk") {
        m = ModelConfig::desk(k);
    } else if (preset == "reference") {
        m = ModelConfig::reference(k);
    } else {
        throw ConfigError("model.preset: expected desk or reference, got '" + preset + "'");
    }
    s.read("width_scale", m.width_scale);
    s.read("depth_scale", m.depth_scale);
    s.read("sample_rate", m.sample_rate);
    s.read("mu", m.mu);
    s.read("n_partials", m.n_partials);
    s.read("noise_bands", m.noise_bands);
    s.read("frame_hop", m.frame_hop);
    s.read("frame_size", m.frame_size);
    s.read("train_samples", m.train_samples);
    s.read("noise_seed", m.noise_seed, 0);
    s.finish();
}

void read_dataset(const json& j, DatasetConfig& d) {
    Section s(j, "dataset");
    s.read("source", d.source);
    s.read("n_items", d.n_items);
    s.read("duration", d.duration);
    s.read("path", d.path);
    s.read("segment_seconds", d.segment_seconds);
    s.read_optional("seed", d.seed);
    s.finish();
}

void read_training(const json& j, TrainConfig& t) {
    Section s(j, "training");
    s.read("batch_size", t.batch_size);
    s.read("lr", t.adam.lr);
    s.read("beta1", t.adam.beta1);
    s.read("beta2", t.adam.beta2);
    s.read("eps", t.adam.eps);
    s.read("weight_decay", t.adam.weight_decay);
    s.read("max_epochs", t.max_epochs);
    s.read("patience", t.patience);
    s.read("max_steps_per_epoch", t.max_steps_per_epoch);
    s.finish();
}

void read_criteria(const json& j, CriteriaOptions& c) {
    Section s(j, "imp.criteria");
    std::string acc = c.accumulation == GradientAccumulation::per_batch_abs ? "per_batch_abs" : "whole_dataset";
    s.read("gradient_accumulation", acc);
    if (acc == "per_batch_abs") {
        c.accumulation = GradientAccumulation::per_batch_abs;
    } else if (acc == "whole_dataset") {
        c.accumulation = GradientAccumulation::whole_dataset;
    } else {
        throw ConfigError("imp.criteria.gradient_accumulation: expected per_batch_abs or whole_dataset");
    }
    s.read("info_window", c.info_window);
    s.read("info_min_hop", c.info_min_hop);
    s.read("info_max_bins", c.info_max_bins);
    if (s.has("mi")) {
        Section m(s.at("mi"), "imp.criteria.mi");
        if (m.has("bin_counts")) {
            const json& v = m.at("bin_counts");
            if (!v.is_array()) throw ConfigError("imp.criteria.mi.bin_counts: expected an array");
            c.mi.bin_counts.clear();
            for (const auto& e : v) {
                if (!e.is_number_unsigned()) throw ConfigError("imp.criteria.mi.bin_counts: expected integers");
                c.mi.bin_counts.push_back(e.get<std::size_t>());
            }
        }
        m.read("noise_sigma_relative", c.mi.noise_sigma_relative);
        m.read("max_samples", c.mi.max_samples);
        m.read("clamp_nonneg", c.mi.clamp_nonneg);
        m.finish();
    }
    s.finish();
}

void read_imp(const json& j, ImpConfig& imp) {
    Section s(j, "imp");
    s.read("prune_fraction", imp.prune_fraction);
    s.read("iterations", imp.iterations);
    s.read("rewind_step", imp.rewind_step);
    s.read_enum("mode", [&](const std::string& v) { imp.mode = prune_mode_from_string(v); });
    s.read_enum("selection", [&](const std::string& v) { imp.selection = selection_from_string(v); });
    s.read_optional("global_until", imp.global_until);
    s.read_enum("criterion", [&](const std::string& v) { imp.criterion = criterion_from_string(v); });
    s.read_enum("scaling", [&](const std::string& v) { imp.scaling = scaling_from_string(v); });
    s.read_optional("stop_error_multiplier", imp.stop_error_multiplier);
    s.read("min_units", imp.min_units);
    if (s.has("criteria")) read_criteria(s.at("criteria"), imp.criteria);
    s.finish();
}

void read_audio(const json& j, AudioOutputConfig& a) {
    Section s(j, "audio");
    if (s.has("iterations")) {
        const json& v = s.at("iterations");
        if (!v.is_array()) throw ConfigError("audio.iterations: expected an array");
        a.iterations.clear();
        for (const auto& e : v) {
            if (!e.is_number_unsigned()) throw ConfigError("audio.iterations: expected nonnegative integers");
            a.iterations.push_back(e.get<std::size_t>());
        }
    }
    s.read("last", a.last);
    s.read("seconds", a.seconds);
    s.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    imp.validate();
    if (dataset.source != "synthetic_tones" && dataset.source != "wav_dir")
        throw ConfigError("dataset.source: expected synthetic_tones or wav_dir, got '" + dataset.source + "'");
    if (dataset.source == "wav_dir" && dataset.path.empty()) throw ConfigError("dataset.path: required for wav_dir");
    if (!(dataset.segment_seconds > 0.0)) throw ConfigError("dataset.segment_seconds: must be positive");
    if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
    if (!(audio.seconds > 0.0)) throw ConfigError("audio.seconds: must be positive");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    Section s(doc, "config");
    if (s.has("model")) read_model(s.at("model"), cfg.model);
    if (s.has("dataset")) read_dataset(s.at("dataset"), cfg.dataset);
    if (s.has("training")) read_training(s.at("training"), cfg.imp.train);
    if (s.has("imp")) read_imp(s.at("imp"), cfg.imp);
    s.read("platforms", cfg.platforms);
    s.read("output_dir", cfg.output_dir);
    s.read("seed", cfg.seed, 0);
    s.read("compare_modes", cfg.compare_modes);
    if (s.has("audio")) read_audio(s.at("audio"), cfg.audio);
    s.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file '" + path + "' cannot be opened");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_experiment_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
    const auto& m = cfg.model;
    const auto& t = cfg.imp.train;
    const auto& i = cfg.imp;
    json j;
    j["model"] = {{"kind", to_string(m.kind)},
                  {"width_scale", m.width_scale},
                  {"depth_scale", m.depth_scale},
                  {"sample_rate", m.sample_rate},
                  {"mu", m.mu},
                  {"n_partials", m.n_partials},
                  {"noise_bands", m.noise_bands},
                  {"frame_hop", m.frame_hop},
                  {"frame_size", m.frame_size},
                  {"train_samples", m.train_samples},
                  {"noise_seed", m.noise_seed}};
    j["dataset"] = {{"source", cfg.dataset.source},
                    {"n_items", cfg.dataset.n_items},
                    {"duration", cfg.dataset.duration},
                    {"path", cfg.dataset.path},
                    {"segment_seconds", cfg.dataset.segment_seconds},
                    {"seed", cfg.dataset.seed ? json(*cfg.dataset.seed) : json(nullptr)}};
    j["training"] = {{"batch_size", t.batch_size}, {"lr", t.adam.lr},
                     {"beta1", t.adam.beta1},      {"beta2", t.adam.beta2},
                     {"eps", t.adam.eps},          {"weight_decay", t.adam.weight_decay},
                     {"max_epochs", t.max_epochs}, {"patience", t.patience},
                     {"max_steps_per_epoch", t.max_steps_per_epoch}};
    j["imp"] = {
        {"prune_fraction", i.prune_fraction},
        {"iterations", i.iterations},
        {"rewind_step", i.rewind_step},
        {"mode", to_string(i.mode)},
        {"selection", to_string(i.selection)},
        {"global_until", i.global_until ? json(*i.global_until) : json(nullptr)},
        {"criterion", to_string(i.criterion)},
        {"scaling", to_string(i.scaling)},
        {"stop_error_multiplier", i.stop_error_multiplier ? json(*i.stop_error_multiplier) : json(nullptr)},
        {"min_units", i.min_units},
        {"criteria",
         {{"gradient_accumulation",
           i.criteria.accumulation == GradientAccumulation::per_batch_abs ? "per_batch_abs" : "whole_dataset"},
          {"info_window", i.criteria.info_window},
          {"info_min_hop", i.criteria.info_min_hop},
          {"info_max_bins", i.criteria.info_max_bins},
          {"mi",
           {{"bin_counts", i.criteria.mi.bin_counts},
            {"noise_sigma_relative", i.criteria.mi.noise_sigma_relative},
            {"max_samples", i.criteria.mi.max_samples},
            {"clamp_nonneg", i.criteria.mi.clamp_nonneg}}}}}};
    j["platforms"] = cfg.platforms;
    j["output_dir"] = cfg.output_dir;
    j["seed"] = cfg.seed;
    j["compare_modes"] = cfg.compare_modes;
    j["audio"] = {{"iterations", cfg.audio.iterations}, {"last", cfg.audio.last}, {"seconds", cfg.audio.seconds}};
    return j.dump(2);
}

DataSplit prepare_data(const ExperimentConfig& cfg) {
    const std::uint64_t data_seed = cfg.dataset.seed ? *cfg.dataset.seed : mix_seed(cfg.seed, 3);
    std::vector<AudioExample> items;
    if (cfg.dataset.source == "synthetic_tones") {
        items = gen_synthetic_tones(cfg.dataset.n_items, cfg.model.sample_rate, cfg.dataset.duration, data_seed,
                                    cfg.model.frame_hop);
    } else {
        const auto sr = static_cast<std::uint32_t>(std::lround(cfg.model.sample_rate));
        const auto raw = load_wav_dir(cfg.dataset.path, sr, cfg.model.frame_hop);
        auto length = static_cast<std::size_t>(std::llround(cfg.dataset.segment_seconds * cfg.model.sample_rate));
        length = std::max(cfg.model.frame_hop, length / cfg.model.frame_hop * cfg.model.frame_hop);
        items = segment(raw, length);
        if (cfg.dataset.n_items > 0 && items.size() > cfg.dataset.n_items) items.resize(cfg.dataset.n_items);
    }
    return split_dataset(std::move(items), mix_seed(cfg.seed, 2));
}

std::vector<PlatformProfile> experiment_platforms(const ExperimentConfig& cfg) {
    return cfg.platforms.empty() ? table1_platforms() : load_platforms(cfg.platforms);
}

// ---------------------------------------------------------------------------
// Experiments

void write_pareto_csv(std::ostream& os, const ImpTrace& trace) {
    std::vector<ParetoPoint> points;
    for (const auto& r : trace.records) points.push_back({r.test_error_multiplier, r.flops_per_second_audio, r.iteration});
    std::set<std::size_t> front;
    for (const auto& p : pareto_front(points)) front.insert(p.tag);
    os << "iteration,test_error_multiplier,flops_per_second_audio,disk_bytes,on_front\n";
    char buf[256];
    for (const auto& r : trace.records) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%llu,%d\n", r.iteration, r.test_error_multiplier,
                      r.flops_per_second_audio, static_cast<unsigned long long>(r.disk_bytes),
                      front.count(r.iteration) ? 1 : 0);
        os << buf;
    }
}

namespace {

std::string iteration_name(std::size_t it) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "iter_%02zu", it);
    return buf;
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = experiment_config_json(cfg);
    const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

template <class F>
void write_file(const fs::path& path, std::vector<std::string>& artifacts, const fs::path& root, F body) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    body(out);
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
    artifacts.push_back(fs::relative(path, root).string());
}

struct Manifest {
    fs::path root;
    std::string hash;
    std::vector<std::string> artifacts;
    std::vector<std::pair<std::string, double>> timing;

    void write(bool complete, const std::string& error) const {
        std::ofstream out(root / "MANIFEST");
        out << "status: " << (complete ? "complete" : "incomplete") << "\n";
        out << "config_hash: " << hash << "\n";
        out << "written_at: " << utc_now() << "\n";
        if (!error.empty()) out << "error: " << error << "\n";
        out << "artifacts:\n";
        for (const auto& a : artifacts) out << "  " << a << "\n";
        out << "retrain_seconds:\n";
        for (const auto& [name, s] : timing) out << "  " << name << " " << s << "\n";
    }
};

ImpTrace run_single(const ExperimentConfig& cfg, const DataSplit& data, const fs::path& dir, Manifest& manifest) {
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "embed");
    fs::create_directories(dir / "audio");
    const auto platforms = experiment_platforms(cfg);
    const auto sr = static_cast<std::uint32_t>(std::lround(cfg.model.sample_rate));
    const auto audio_len = static_cast<std::size_t>(std::llround(cfg.audio.seconds * cfg.model.sample_rate));
    const std::string prefix = fs::relative(dir, manifest.root).string();
    const std::string tag = prefix == "." ? "" : prefix + "/";

    auto emit_audio = [&](const Network& net, std::size_t it) {
        GenerateOptions go;
        go.seed = mix_seed(cfg.seed, 5);
        const Tensor wave = generate(net, cfg.model, data.test.front(), audio_len, go);
        const fs::path p = dir / "audio" / (iteration_name(it) + ".wav");
        write_wav(p.string(), wave.data(), sr);
        manifest.artifacts.push_back(fs::relative(p, manifest.root).string());
    };

    Network net = build(cfg.model, cfg.seed);
    ImpConfig imp = cfg.imp;
    imp.train.seed = mix_seed(cfg.seed, 1);
    imp.criteria.seed = mix_seed(cfg.seed, 4);
    std::size_t last_audio = SIZE_MAX;
    const ImpTrace trace = run_imp(net, cfg.model, data, imp, [&](const ImpRecord& r, const Network& n) {
        const std::string name = iteration_name(r.iteration);
        const fs::path ckpt = dir / "checkpoints" / (name + ".ulga");
        save(n, ckpt.string());
        manifest.artifacts.push_back(fs::relative(ckpt, manifest.root).string());
        const EmbedReport report = embed_report(measure_costs(n, cfg.model, r.test_error_multiplier), platforms);
        write_file(dir / "embed" / (name + ".csv"), manifest.artifacts, manifest.root,
                   [&](std::ostream& os) { write_embed_csv(os, report); });
        manifest.timing.emplace_back(tag + name, r.train_seconds);
        if (std::find(cfg.audio.iterations.begin(), cfg.audio.iterations.end(), r.iteration) !=
            cfg.audio.iterations.end()) {
            emit_audio(n, r.iteration);
            last_audio = r.iteration;
        }
    });
    if (cfg.audio.last && !trace.records.empty() && trace.records.back().iteration != last_audio && !trace.aborted)
        emit_audio(net, trace.records.back().iteration);
    write_file(dir / "trace.csv", manifest.artifacts, manifest.root,
               [&](std::ostream& os) { write_trace_csv(os, trace); });
    write_file(dir / "pareto.csv", manifest.artifacts, manifest.root,
               [&](std::ostream& os) { write_pareto_csv(os, trace); });
    if (!trace.records.empty()) {
        const ImpRecord& last = trace.records.back();
        const EmbedReport report = embed_report(measure_costs(net, cfg.model, last.test_error_multiplier), platforms);
        write_file(dir / "embed_summary.txt", manifest.artifacts, manifest.root,
                   [&](std::ostream& os) { write_embed_summary(os, report); });
    }
    if (trace.aborted) throw NumericError("IMP aborted: " + trace.stop_reason);
    return trace;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    Manifest manifest;
    manifest.root = cfg.output_dir;
    manifest.hash = config_hash(cfg);
    fs::create_directories(manifest.root);
    ExperimentResult result;
    try {
        write_file(manifest.root / "config.json", manifest.artifacts, manifest.root,
                   [&](std::ostream& os) { os << experiment_config_json(cfg) << "\n"; });
        const DataSplit data = prepare_data(cfg);
        if (!cfg.compare_modes) {
            result.trace = run_single(cfg, data, manifest.root, manifest);
        } else {
            ExperimentConfig mask = cfg, trim = cfg;
            mask.imp.mode = PruneMode::mask;
            mask.imp.criterion = Criterion::magnitude;
            trim.imp.mode = PruneMode::trim;
            result.paired = run_single(mask, data, manifest.root / "mask", manifest);
            result.trace = run_single(trim, data, manifest.root / "trim", manifest);
            struct Row {
                double weights;
                const char* mode;
                const ImpRecord* r;
            };
            std::vector<Row> rows;
            for (const auto& r : result.paired.records) rows.push_back({r.weights_remaining_frac, "mask", &r});
            for (const auto& r : result.trace.records) rows.push_back({r.weights_remaining_frac, "trim", &r});
            std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.weights > b.weights; });
            write_file(manifest.root / "comparison.csv", manifest.artifacts, manifest.root, [&](std::ostream& os) {
                os << "weights_remaining_frac,mode,iteration,units_remaining_frac,test_error_multiplier,"
                      "flops_per_second_audio\n";
                char buf[256];
                for (const auto& row : rows) {
                    std::snprintf(buf, sizeof buf, "%.9g,%s,%zu,%.9g,%.9g,%.9g\n", row.weights, row.mode,
                                  row.r->iteration, row.r->units_remaining_frac, row.r->test_error_multiplier,
                                  row.r->flops_per_second_audio);
                    os << buf;
                }
            });
        }
    } catch (const std::exception& e) {
        manifest.write(false, e.what());
        throw;
    }
    manifest.write(true, "");
    result.artifacts = manifest.artifacts;
    return result;
}

}  // namespace ulga
