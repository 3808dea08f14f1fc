// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/models.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <memory>
#include <tuple>

#include "ulga/fft.hpp"

namespace ulga {

// ---------------------------------------------------------------------------
// mu-law

MuLawCodec::MuLawCodec(int mu) : mu_(mu) {
    if (mu < 1 || mu > 65535) throw ConfigError("mu-law: mu must be in [1, 65535]");
}

float MuLawCodec::compress(float x) const {
    const double v = std::clamp(static_cast<double>(x), -1.0, 1.0);
    const double y = std::log1p(mu_ * std::abs(v)) / std::log1p(static_cast<double>(mu_));
    return static_cast<float>(v < 0 ? -y : y);
}

std::int32_t MuLawCodec::encode(float x) const {
    const double y = compress(x);
    const long c = std::lround((y + 1.0) * 0.5 * mu_);
    return static_cast<std::int32_t>(std::clamp<long>(c, 0, mu_));
}

float MuLawCodec::decode(std::int32_t c) const {
    if (c < 0 || c > mu_) throw ConfigError("mu-law: class " + std::to_string(c) + " out of range");
    const double y = 2.0 * c / mu_ - 1.0;
    const double x = (std::pow(1.0 + mu_, std::abs(y)) - 1.0) / mu_;
    return static_cast<float>(y < 0 ? -x : x);
}

// ---------------------------------------------------------------------------
// Harmonic plus noise synthesis

namespace {

using NoiseKey = std::tuple<std::size_t, std::size_t, std::uint64_t>;

// White noise split into `bands` linear frequency bands; rows sum to the
// original noise. [bands x length].
std::shared_ptr<const std::vector<float>> noise_bank(std::size_t bands, std::size_t length, std::uint64_t seed) {
    thread_local std::map<NoiseKey, std::shared_ptr<const std::vector<float>>> cache;
    const NoiseKey key{bands, length, seed};
    if (auto it = cache.find(key); it != cache.end()) return it->second;

    std::size_t n = 1;
    while (n < length) n <<= 1;
    Rng rng(seed);
    std::vector<std::complex<float>> spec(n);
    for (auto& v : spec) v = {static_cast<float>(rng.normal()), 0.0f};
    const Fft fft(n);
    fft.forward(spec);
    auto bank = std::make_shared<std::vector<float>>(bands * length, 0.0f);
    std::vector<std::complex<float>> part(n);
    const std::size_t half = n / 2;
    auto band_of = [&](std::size_t bin) {
        if (bands == 1) return std::size_t{0};
        return static_cast<std::size_t>(std::lround(static_cast<double>(bin) / half * (bands - 1)));
    };
    for (std::size_t j = 0; j < bands; ++j) {
        std::fill(part.begin(), part.end(), std::complex<float>{});
        bool any = false;
        for (std::size_t b = 0; b <= half; ++b) {
            if (band_of(b) != j) continue;
            any = true;
            part[b] = spec[b];
            if (b != 0 && b != half) part[n - b] = spec[n - b];
        }
        if (!any) continue;
        fft.inverse(part);
        for (std::size_t t = 0; t < length; ++t) (*bank)[j * length + t] = part[t].real() / static_cast<float>(n);
    }
    if (cache.size() >= 16) cache.clear();
    cache.emplace(key, bank);
    return bank;
}

float interp_frame(const std::vector<float>& f, std::size_t hop, std::size_t t) {
    const std::size_t j = t / hop;
    if (j + 1 >= f.size()) return f.back();
    const float frac = static_cast<float>(t - j * hop) / static_cast<float>(hop);
    return f[j] + (f[j + 1] - f[j]) * frac;
}

}  // namespace

Tensor harmonic_noise_core(const Tensor& harm, const Tensor& noise, const std::vector<std::vector<float>>& f0,
                           double sample_rate, std::size_t hop, std::size_t length, std::uint64_t noise_seed) {
    if (harm.rank() != 3 || noise.rank() != 3 || harm.dim(0) != noise.dim(0) || harm.dim(2) != noise.dim(2))
        throw ShapeError("harmonic_noise: amplitudes " + shape_str(harm.shape()) + " and noise gains " +
                         shape_str(noise.shape()) + " must be [B, K, F] and [B, NB, F]");
    const std::size_t B = harm.dim(0), K = harm.dim(1), F = harm.dim(2), NB = noise.dim(1);
    if (f0.size() != B) throw ShapeError("harmonic_noise: one f0 track per batch row required");
    if (hop == 0 || length == 0) throw ConfigError("harmonic_noise: hop and length must be positive");
    const double nyquist = sample_rate / 2.0;
    for (const auto& row : f0) {
        if (row.size() != F) throw ShapeError("harmonic_noise: f0 track length differs from frame count");
        for (float v : row) {
            if (!(v > 0.0f)) throw ConfigError("harmonic_noise: f0 must be positive");
            if (v >= nyquist)
                throw ConfigError("harmonic_noise: f0 " + std::to_string(v) + " Hz is at or above Nyquist");
        }
    }

    std::vector<float> basis(B * K * length);
    for (std::size_t b = 0; b < B; ++b) {
        double phase = 0.0;
        for (std::size_t t = 0; t < length; ++t) {
            const double f = interp_frame(f0[b], hop, t);
            for (std::size_t k = 0; k < K; ++k) {
                const double fk = f * static_cast<double>(k + 1);
                basis[(b * K + k) * length + t] = fk < nyquist ? static_cast<float>(std::sin((k + 1) * phase)) : 0.0f;
            }
            phase = std::fmod(phase + 2.0 * M_PI * f / sample_rate, 2.0 * M_PI);
        }
    }
    Tensor harmonic = sum(mul(upsample_linear(harm, hop, length), Tensor({B, K, length}, std::move(basis))), 1);
    auto bank = noise_bank(NB, length, noise_seed);
    Tensor noisy = sum(mul(upsample_linear(noise, hop, length), Tensor({NB, length}, *bank)), 1);
    return add(harmonic, noisy);
}

Tensor synthesize_harmonic_noise(const HarmonicNoiseParams& p, double sample_rate, std::size_t length) {
    const std::size_t F = p.f0.size(), K = p.n_partials, NB = p.n_bands;
    if (F == 0 || length == 0) throw ConfigError("synthesize: need at least one frame and one sample");
    if (p.loudness.size() != F || p.harmonic_amps.size() != F * K || p.noise_filter.size() != F * NB)
        throw ShapeError("synthesize: frame streams must all have " + std::to_string(F) + " frames");
    for (std::size_t f = 0; f < F; ++f) {
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const float a = p.harmonic_amps[f * K + k];
            if (a < 0.0f) throw ConfigError("synthesize: harmonic amplitudes must be nonnegative");
            total += a;
        }
        if (total > 1.0 + 1e-5) throw ConfigError("synthesize: harmonic amplitudes sum above 1 in a frame");
    }
    std::vector<float> harm(std::max<std::size_t>(K, 1) * F, 0.0f);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t f = 0; f < F; ++f) harm[k * F + f] = p.loudness[f] * p.harmonic_amps[f * K + k];
    std::vector<float> gains(std::max<std::size_t>(NB, 1) * F, 0.0f);
    for (std::size_t j = 0; j < NB; ++j)
        for (std::size_t f = 0; f < F; ++f) gains[j * F + f] = p.noise_filter[f * NB + j];
    Tensor y = harmonic_noise_core(Tensor({1, std::max<std::size_t>(K, 1), F}, std::move(harm)),
                                   Tensor({1, std::max<std::size_t>(NB, 1), F}, std::move(gains)), {p.f0},
                                   sample_rate, p.hop, length, p.noise_seed);
    std::vector<float> out(y.data().begin(), y.data().end());
    for (auto& v : out) v = std::clamp(v, -1.0f, 1.0f);
    return Tensor({length}, std::move(out));
}

// ---------------------------------------------------------------------------
// Configs

const char* to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::tiny_wavenet: return "tiny_wavenet";
        case ModelKind::tiny_sing: return "tiny_sing";
        case ModelKind::tiny_ddsp: return "tiny_ddsp";
    }
    return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
    for (auto k : {ModelKind::tiny_wavenet, ModelKind::tiny_sing, ModelKind::tiny_ddsp})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

ModelConfig ModelConfig::desk(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    switch (kind) {
        case ModelKind::tiny_wavenet:
            c.width_scale = 0.125;
            c.depth_scale = 0.4;
            break;
        case ModelKind::tiny_sing:
            c.width_scale = 1.0 / 64.0;
            c.depth_scale = 5.0 / 9.0;
            break;
        case ModelKind::tiny_ddsp:
            c.width_scale = 0.125;
            c.depth_scale = 2.0 / 3.0;
            break;
    }
    return c;
}

ModelConfig ModelConfig::reference(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    c.width_scale = 1.0;
    c.depth_scale = 1.0;
    if (kind == ModelKind::tiny_ddsp) {
        c.n_partials = 100;
        c.noise_bands = 160;
    }
    return c;
}

void ModelConfig::validate() const {
    if (!(width_scale > 0) || !(depth_scale > 0)) throw ConfigError("model: scale factors must be positive");
    if (!(sample_rate > 0)) throw ConfigError("model: sample_rate must be positive");
    MuLawCodec check(mu);
    if (n_partials < 1) throw ConfigError("model: n_partials must be >= 1");
    if (noise_bands < 2) throw ConfigError("model: noise_bands must be >= 2");
    if (frame_hop < 1 || frame_size < 1) throw ConfigError("model: frame sizes must be >= 1");
    if (train_samples < 2) throw ConfigError("model: train_samples must be >= 2");
    model_shape(*this);
}

namespace {

std::size_t scaled(double reference, double scale, const char* what) {
    const long v = std::lround(reference * scale);
    if (v < 1)
        throw ConfigError(std::string("model: ") + what + " scales to zero units (reference " +
                          std::to_string(static_cast<long>(reference)) + " x " + std::to_string(scale) + ")");
    return static_cast<std::size_t>(v);
}

}  // namespace

ModelShape model_shape(const ModelConfig& cfg) {
    ModelShape s;
    switch (cfg.kind) {
        case ModelKind::tiny_wavenet:
            s.stacks = 2;
            s.layers_per_stack = scaled(20, cfg.depth_scale, "layers per stack");
            s.residual = scaled(128, cfg.width_scale, "residual channels");
            s.gate = scaled(256, cfg.width_scale, "gate channels");
            s.skip = scaled(256, cfg.width_scale, "skip channels");
            break;
        case ModelKind::tiny_sing:
            s.conv_layers = scaled(9, cfg.depth_scale, "convolution layers");
            s.channels = scaled(4096, cfg.width_scale, "channels");
            break;
        case ModelKind::tiny_ddsp:
            s.hidden = scaled(512, cfg.width_scale, "hidden units");
            s.dense_layers = scaled(3, cfg.depth_scale, "dense layers");
            break;
    }
    return s;
}

std::size_t samples_per_step(const ModelConfig& cfg) {
    switch (cfg.kind) {
        case ModelKind::tiny_wavenet: return 1;
        case ModelKind::tiny_sing: return cfg.frame_size;
        case ModelKind::tiny_ddsp: return cfg.frame_hop;
    }
    return 1;
}

void store_model_config(Network& net, const ModelConfig& cfg) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    net.meta["model.kind"] = to_string(cfg.kind);
    net.meta["model.width_scale"] = num(cfg.width_scale);
    net.meta["model.depth_scale"] = num(cfg.depth_scale);
    net.meta["model.sample_rate"] = num(cfg.sample_rate);
    net.meta["model.mu"] = std::to_string(cfg.mu);
    net.meta["model.n_partials"] = std::to_string(cfg.n_partials);
    net.meta["model.noise_bands"] = std::to_string(cfg.noise_bands);
    net.meta["model.frame_hop"] = std::to_string(cfg.frame_hop);
    net.meta["model.frame_size"] = std::to_string(cfg.frame_size);
    net.meta["model.train_samples"] = std::to_string(cfg.train_samples);
    net.meta["model.noise_seed"] = std::to_string(cfg.noise_seed);
}

ModelConfig model_config_from(const Network& net) {
    auto get = [&](const char* key) -> const std::string& {
        auto it = net.meta.find(key);
        if (it == net.meta.end()) throw ConfigError(std::string("network carries no model metadata (") + key + ")");
        return it->second;
    };
    try {
        ModelConfig c;
        c.kind = model_kind_from_string(get("model.kind"));
        c.width_scale = std::stod(get("model.width_scale"));
        c.depth_scale = std::stod(get("model.depth_scale"));
        c.sample_rate = std::stod(get("model.sample_rate"));
        c.mu = std::stoi(get("model.mu"));
        c.n_partials = std::stoul(get("model.n_partials"));
        c.noise_bands = std::stoul(get("model.noise_bands"));
        c.frame_hop = std::stoul(get("model.frame_hop"));
        c.frame_size = std::stoul(get("model.frame_size"));
        c.train_samples = std::stoul(get("model.train_samples"));
        c.noise_seed = std::stoull(get("model.noise_seed"));
        return c;
    } catch (const std::logic_error& e) {
        throw ConfigError(std::string("malformed model metadata: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Builders

namespace {

std::string idx(const char* base, std::size_t i, const char* suffix = "") {
    return std::string(base) + std::to_string(i) + suffix;
}

Network build_wavenet(const ModelConfig& cfg, const ModelShape& s, Rng& rng) {
    const std::size_t levels = static_cast<std::size_t>(cfg.mu) + 1;
    const std::size_t R = s.residual, G = s.gate, S = s.skip;
    Network net(levels);
    int h = static_cast<int>(net.add_layer("input", LayerSpec::conv1d(levels, R, 2), {kNetworkInput}, &rng));
    std::vector<int> skips;
    const std::size_t blocks = s.stacks * s.layers_per_stack;
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t d = std::size_t{1} << (b % s.layers_per_stack);
        const int f = static_cast<int>(net.add_layer(idx("b", b, "_filter"), LayerSpec::conv1d(R, G, 2, d), {h}, &rng));
        const int g = static_cast<int>(net.add_layer(idx("b", b, "_gate"), LayerSpec::conv1d(R, G, 2, d), {h}, &rng));
        const int z = static_cast<int>(net.add_layer(idx("b", b, "_gated"), LayerSpec::gate(G), {f, g}));
        skips.push_back(static_cast<int>(net.add_layer(idx("b", b, "_skip"), LayerSpec::conv1d(G, S, 1), {z}, &rng)));
        if (b + 1 < blocks) {
            const int r = static_cast<int>(net.add_layer(idx("b", b, "_res"), LayerSpec::conv1d(G, R, 1), {z}, &rng));
            h = static_cast<int>(net.add_layer(idx("b", b, "_sum"), LayerSpec::add(R), {h, r}));
        }
    }
    int y = skips.size() == 1 ? skips[0] : static_cast<int>(net.add_layer("skips", LayerSpec::add(S), skips));
    y = static_cast<int>(net.add_layer("post_relu0", LayerSpec::act(S, Activation::relu), {y}));
    y = static_cast<int>(net.add_layer("post", LayerSpec::conv1d(S, S, 1), {y}, &rng));
    y = static_cast<int>(net.add_layer("post_relu1", LayerSpec::act(S, Activation::relu), {y}));
    net.add_layer("logits", LayerSpec::conv1d(S, levels, 1), {y}, &rng);
    return net;
}

Network build_sing(const ModelConfig& cfg, const ModelShape& s, Rng& rng) {
    const std::size_t P = cfg.frame_size;
    Network net(P);
    int h = kNetworkInput;
    std::size_t c_in = P;
    for (std::size_t i = 0; i < s.conv_layers; ++i) {
        const bool last = i + 1 == s.conv_layers;
        const std::size_t c_out = last ? P : s.channels;
        h = static_cast<int>(
            net.add_layer(last ? std::string("out") : idx("conv", i), LayerSpec::conv1d(c_in, c_out, 3), {h}, &rng));
        if (!last) {
            h = static_cast<int>(net.add_layer(idx("bn", i), LayerSpec::batchnorm1d(c_out), {h}, &rng));
            h = static_cast<int>(net.add_layer(idx("relu", i), LayerSpec::act(c_out, Activation::relu), {h}));
        }
        c_in = c_out;
    }
    return net;
}

Network build_ddsp(const ModelConfig& cfg, const ModelShape& s, Rng& rng) {
    const std::size_t H = s.hidden;
    Network net(2);
    int h = static_cast<int>(net.add_layer("gru", LayerSpec::gru(2, H), {kNetworkInput}, &rng));
    for (std::size_t i = 0; i < s.dense_layers; ++i) {
        h = static_cast<int>(net.add_layer(idx("fc", i), LayerSpec::linear(H, H), {h}, &rng));
        h = static_cast<int>(net.add_layer(idx("relu", i), LayerSpec::act(H, Activation::relu), {h}));
    }
    net.add_layer("out", LayerSpec::linear(H, 1 + cfg.n_partials + cfg.noise_bands), {h}, &rng);
    return net;
}

}  // namespace

Network build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const ModelShape s = model_shape(cfg);
    Rng rng(seed);
    Network net;
    switch (cfg.kind) {
        case ModelKind::tiny_wavenet: net = build_wavenet(cfg, s, rng); break;
        case ModelKind::tiny_sing: net = build_sing(cfg, s, rng); break;
        case ModelKind::tiny_ddsp: net = build_ddsp(cfg, s, rng); break;
    }
    store_model_config(net, cfg);
    return net;
}

// ---------------------------------------------------------------------------
// Losses

Tensor nll_loss_wavenet(const Tensor& logits, std::span<const std::int32_t> targets) {
    if (logits.rank() != 2 && logits.rank() != 3)
        throw ShapeError("nll_loss: logits must be [T, levels] or [B, levels, T], got " + shape_str(logits.shape()));
    return softmax_cross_entropy(logits, targets);
}

Tensor multiscale_spectral_loss(const Tensor& x, const Tensor& x_hat, const SpectrogramConfig& cfg) {
    cfg.validate();
    if (x.shape() != x_hat.shape())
        throw ShapeError("spectral loss: length mismatch " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
    if (x.rank() != 1 && x.rank() != 2) throw ShapeError("spectral loss: signals must be [T] or [B, T]");
    const std::size_t T = x.dim(x.rank() - 1);
    Tensor total;
    for (std::size_t w : cfg.window_sizes) {
        if (T < w)
            throw ShapeError("spectral loss: signal of " + std::to_string(T) + " samples is shorter than window " +
                             std::to_string(w));
        const std::size_t hop = cfg.hop(w);
        Tensor a = log(add_scalar(power_spectrogram(x, w, hop), cfg.floor_epsilon));
        Tensor b = log(add_scalar(power_spectrogram(x_hat, w, hop), cfg.floor_epsilon));
        Tensor term = mean(abs(sub(a, b)));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Batches

std::vector<float> ddsp_features(const AudioExample& ex, std::size_t frames) {
    if (ex.f0.empty() || ex.loudness.size() != ex.f0.size())
        throw ConfigError("ddsp: example carries no f0/loudness conditioning");
    std::vector<float> out(2 * frames);
    const double lo = std::log(80.0), span = std::log(10.0);
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t j = std::min(f, ex.f0.size() - 1);
        out[f] = static_cast<float>((std::log(std::max(1.0f, ex.f0[j])) - lo) / span);
        out[frames + f] = ex.loudness[j];
    }
    return out;
}

namespace {

std::vector<std::vector<float>> f0_tracks(std::span<const AudioExample* const> items, std::size_t frames) {
    std::vector<std::vector<float>> out;
    for (const AudioExample* ex : items) {
        if (ex->f0.empty()) throw ConfigError("ddsp: example carries no f0 conditioning");
        std::vector<float> row(frames);
        for (std::size_t f = 0; f < frames; ++f) row[f] = ex->f0[std::min(f, ex->f0.size() - 1)];
        out.push_back(std::move(row));
    }
    return out;
}

Tensor ddsp_render(const ModelConfig& cfg, const Tensor& out, const std::vector<std::vector<float>>& f0,
                   std::size_t length) {
    const std::size_t B = out.dim(0), F = out.dim(2), K = cfg.n_partials, NB = cfg.noise_bands;
    if (out.dim(1) != 1 + K + NB) throw ShapeError("ddsp: controller output has the wrong channel count");
    Tensor amp = sigmoid(slice(out, 1, 0, 1));
    Tensor dist = softmax(slice(out, 1, 1, 1 + K), 1);
    std::vector<float> mask(B * K * F);
    const double nyquist = cfg.sample_rate / 2.0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t f = 0; f < F; ++f)
                mask[(b * K + k) * F + f] = static_cast<double>(f0[b][f]) * (k + 1) < nyquist ? 1.0f : 0.0f;
    Tensor harm = mul(mul(dist, amp), Tensor({B, K, F}, std::move(mask)));
    Tensor noise = sigmoid(add_scalar(slice(out, 1, 1 + K, 1 + K + NB), -5.0f));
    return harmonic_noise_core(harm, noise, f0, cfg.sample_rate, cfg.frame_hop, length, cfg.noise_seed);
}

}  // namespace

ModelBatch make_batch(const ModelConfig& cfg, std::span<const AudioExample* const> items) {
    if (items.empty()) throw ConfigError("batch: no examples");
    std::size_t T = SIZE_MAX;
    for (const AudioExample* ex : items) T = std::min(T, ex->wave.size());
    ModelBatch batch;
    const std::size_t B = items.size();
    switch (cfg.kind) {
        case ModelKind::tiny_wavenet: {
            T = std::min(T, cfg.train_samples);
            if (T < 2) throw ConfigError("batch: examples too short");
            const MuLawCodec codec(cfg.mu);
            const std::size_t L = static_cast<std::size_t>(codec.levels());
            std::vector<float> onehot(B * L * T, 0.0f);
            batch.classes.resize(B * T);
            for (std::size_t b = 0; b < B; ++b) {
                std::int32_t prev = codec.encode(0.0f);
                for (std::size_t t = 0; t < T; ++t) {
                    onehot[(b * L + static_cast<std::size_t>(prev)) * T + t] = 1.0f;
                    const std::int32_t c = codec.encode(items[b]->wave[t]);
                    batch.classes[b * T + t] = c;
                    prev = c;
                }
            }
            batch.input = Tensor({B, L, T}, std::move(onehot));
            break;
        }
        case ModelKind::tiny_sing: {
            const std::size_t P = cfg.frame_size;
            T = T / P * P;
            if (T == 0) throw ConfigError("batch: examples shorter than one frame");
            const std::size_t F = T / P;
            std::vector<float> frames(B * P * F);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t f = 0; f < F; ++f)
                    for (std::size_t p = 0; p < P; ++p) frames[(b * P + p) * F + f] = items[b]->wave[f * P + p];
            batch.input = Tensor({B, P, F}, std::move(frames));
            break;
        }
        case ModelKind::tiny_ddsp: {
            if (T == 0) throw ConfigError("batch: empty examples");
            const std::size_t F = (T - 1) / cfg.frame_hop + 1;
            std::vector<float> feats(B * 2 * F);
            for (std::size_t b = 0; b < B; ++b) {
                auto row = ddsp_features(*items[b], F);
                std::copy(row.begin(), row.end(), feats.begin() + static_cast<std::ptrdiff_t>(b * 2 * F));
            }
            batch.input = Tensor({B, 2, F}, std::move(feats));
            batch.f0 = f0_tracks(items, F);
            break;
        }
    }
    std::vector<float> target(B * T);
    for (std::size_t b = 0; b < B; ++b)
        std::copy_n(items[b]->wave.begin(), T, target.begin() + static_cast<std::ptrdiff_t>(b * T));
    batch.target = Tensor({B, T}, std::move(target));
    batch.length = T;
    return batch;
}

Tensor render(const ModelConfig& cfg, const Tensor& output, const ModelBatch& batch) {
    switch (cfg.kind) {
        case ModelKind::tiny_sing: {
            const std::size_t B = output.dim(0), P = output.dim(1), F = output.dim(2);
            return reshape(transpose(output, 1, 2), {B, P * F});
        }
        case ModelKind::tiny_ddsp:
            return ddsp_render(cfg, output, batch.f0, batch.length);
        case ModelKind::tiny_wavenet:
            break;
    }
    throw ConfigError("render: the autoregressive model produces class logits, not waveforms");
}

Tensor model_loss(Network& net, const ModelConfig& cfg, const ModelBatch& batch, Mode mode) {
    Tensor out = net.forward(batch.input, mode);
    if (cfg.kind == ModelKind::tiny_wavenet) return nll_loss_wavenet(out, batch.classes);
    return multiscale_spectral_loss(batch.target, render(cfg, out, batch));
}

// ---------------------------------------------------------------------------
// Generation

Tensor generate(const Network& net, const ModelConfig& cfg, const AudioExample& conditioning, std::size_t length,
                const GenerateOptions& opt) {
    if (length < 1) throw ConfigError("generate: length must be >= 1");
    switch (cfg.kind) {
        case ModelKind::tiny_wavenet: {
            const MuLawCodec codec(cfg.mu);
            const std::size_t L = static_cast<std::size_t>(codec.levels());
            if (net.input_channels() != L || net.output_channels() != L)
                throw ShapeError("generate: network does not match the codec levels");
            StreamRunner runner(net);
            Rng rng(opt.seed);
            std::vector<float> frame(L, 0.0f), out(length);
            std::int32_t prev = codec.encode(0.0f);
            for (std::size_t t = 0; t < length; ++t) {
                std::fill(frame.begin(), frame.end(), 0.0f);
                frame[static_cast<std::size_t>(prev)] = 1.0f;
                auto logits = runner.step(frame);
                std::size_t pick = 0;
                if (opt.argmax) {
                    pick = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
                } else {
                    const float top = *std::max_element(logits.begin(), logits.end());
                    double z = 0.0;
                    for (float v : logits) z += std::exp(static_cast<double>(v - top));
                    double u = rng.uniform() * z;
                    pick = L - 1;
                    for (std::size_t c = 0; c < L; ++c) {
                        u -= std::exp(static_cast<double>(logits[c] - top));
                        if (u < 0.0) {
                            pick = c;
                            break;
                        }
                    }
                }
                prev = static_cast<std::int32_t>(pick);
                out[t] = codec.decode(prev);
            }
            return Tensor({length}, std::move(out));
        }
        case ModelKind::tiny_sing: {
            const std::size_t P = cfg.frame_size;
            AudioExample padded = conditioning;
            padded.wave.resize((length + P - 1) / P * P, 0.0f);
            const AudioExample* items[] = {&padded};
            ModelBatch batch = make_batch(cfg, items);
            Network& mut = const_cast<Network&>(net);
            Tensor y = render(cfg, mut.forward(batch.input, Mode::eval), batch);
            return Tensor({length}, std::vector<float>(y.data().begin(), y.data().begin() + length));
        }
        case ModelKind::tiny_ddsp: {
            AudioExample ex = conditioning;
            ex.wave.assign(length, 0.0f);
            const AudioExample* items[] = {&ex};
            ModelBatch batch = make_batch(cfg, items);
            Network& mut = const_cast<Network&>(net);
            Tensor y = render(cfg, mut.forward(batch.input, Mode::eval), batch);
            return Tensor({length}, std::vector<float>(y.data().begin(), y.data().end()));
        }
    }
    return {};
}

}  // namespace ulga
