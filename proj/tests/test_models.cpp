// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "ulga/models.hpp"
#include "ulga/optim.hpp"

using namespace ulga;
using ulga::testing::random_tensor;

namespace {

AudioExample tone(double f0, double amp, std::size_t length, double sr = 16000.0, std::size_t hop = 64) {
    AudioExample ex;
    ex.hop = hop;
    ex.wave.resize(length);
    for (std::size_t t = 0; t < length; ++t)
        ex.wave[t] = static_cast<float>(amp * std::sin(2.0 * M_PI * f0 * t / sr) +
                                        0.3 * amp * std::sin(4.0 * M_PI * f0 * t / sr));
    const std::size_t frames = (length - 1) / hop + 1;
    ex.f0.assign(frames, static_cast<float>(f0));
    ex.loudness.assign(frames, static_cast<float>(amp));
    return ex;
}

// Magnitude spectrum by direct DFT over the whole (Hann-windowed) signal.
std::vector<double> dft_magnitude(std::span<const float> x) {
    std::vector<double> v(x.begin(), x.end());
    return ulga::testing::direct_power_spectrogram(v, v.size(), v.size())[0];
}

std::size_t peak_bin(const std::vector<double>& mag) {
    return static_cast<std::size_t>(std::max_element(mag.begin() + 1, mag.end()) - mag.begin());
}

double spectral_loss_oracle(const std::vector<double>& x, const std::vector<double>& y, const SpectrogramConfig& cfg) {
    double total = 0.0;
    for (std::size_t w : cfg.window_sizes) {
        auto a = ulga::testing::direct_power_spectrogram(x, w, cfg.hop(w));
        auto b = ulga::testing::direct_power_spectrogram(y, w, cfg.hop(w));
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t f = 0; f < a.size(); ++f)
            for (std::size_t k = 0; k < a[f].size(); ++k, ++n)
                s += std::abs(std::log(a[f][k] + cfg.floor_epsilon) - std::log(b[f][k] + cfg.floor_epsilon));
        total += s / static_cast<double>(n);
    }
    return total;
}

std::size_t closed_form_params(const Network& net) {
    std::size_t n = 0;
    for (const auto& l : net.layers()) {
        const auto& s = l.spec;
        switch (s.kind) {
            case LayerKind::linear: n += s.n_out * s.n_in + s.n_out; break;
            case LayerKind::conv1d: n += s.n_out * s.n_in * s.kernel + s.n_out; break;
            case LayerKind::gru: n += 3 * s.n_out * (s.n_in + s.n_out + 1); break;
            case LayerKind::batchnorm1d: n += 2 * s.n_out; break;
            default: break;
        }
    }
    return n;
}

std::pair<double, double> train_steps(const ModelConfig& cfg, std::uint64_t seed, int steps, double lr) {
    Network net = build(cfg, seed);
    const AudioExample a = tone(220.0, 0.5, 1024), b = tone(330.0, 0.3, 1024);
    const AudioExample* items[] = {&a, &b};
    const ModelBatch batch = make_batch(cfg, items);
    AdamConfig ac;
    ac.lr = lr;
    AdamW opt(net.trainable_params(), ac);
    double first = 0.0, last = 0.0;
    for (int s = 0; s < steps; ++s) {
        Tensor loss = model_loss(net, cfg, batch, Mode::train);
        if (s == 0) first = loss.item();
        backward(loss);
        opt.step();
    }
    last = model_loss(net, cfg, batch, Mode::train).item();
    return {first, last};
}

}  // namespace

TEST_CASE("mu-law codec") {
    const MuLawCodec codec(255);
    CHECK(codec.levels() == 256);
    CHECK(codec.encode(-1.0f) == 0);
    CHECK(codec.encode(1.0f) == 255);
    CHECK(codec.encode(5.0f) == 255);
    CHECK_THROWS_AS(codec.decode(256), ConfigError);
    CHECK_THROWS_AS(MuLawCodec(0), ConfigError);

    Rng rng(3);
    std::int32_t prev = -1;
    double worst = 0.0;
    for (int i = 0; i <= 10000; ++i) {
        const float x = static_cast<float>(-1.0 + 2.0 * i / 10000.0);
        const std::int32_t c = codec.encode(x);
        CHECK(c >= prev);
        prev = c;
        worst = std::max(worst, static_cast<double>(std::abs(codec.compress(codec.decode(c)) - codec.compress(x))));
    }
    CHECK(worst <= 2.0 / 256.0);

    // Every class is its own fixed point and decoding is monotone.
    for (std::int32_t c = 0; c < 256; ++c) {
        CHECK(codec.encode(codec.decode(c)) == c);
        if (c > 0) CHECK(codec.decode(c) > codec.decode(c - 1));
    }
    // The decoded level is never further than one level from the input.
    for (int i = 0; i < 1000; ++i) {
        const float x = static_cast<float>(rng.uniform(-1.0, 1.0));
        const std::int32_t c = codec.encode(x);
        CHECK(x >= codec.decode(std::max(c - 1, 0)));
        CHECK(x <= codec.decode(std::min(c + 1, 255)));
    }
}

TEST_CASE("autoregressive cross-entropy") {
    std::vector<std::int32_t> targets = {0, 17, 255, 128};
    Tensor uniform({4, 256}, std::vector<float>(4 * 256, 0.3f));
    CHECK(nll_loss_wavenet(uniform, targets).item() == doctest::Approx(std::log(256.0)).epsilon(1e-6));

    std::vector<float> sure(4 * 256, 0.0f);
    for (std::size_t t = 0; t < 4; ++t) sure[t * 256 + static_cast<std::size_t>(targets[t])] = 100.0f;
    const float l = nll_loss_wavenet(Tensor({4, 256}, sure), targets).item();
    CHECK(l >= 0.0f);
    CHECK(l < 1e-3f);

    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor logits = random_tensor(rng, {6, 256}, -4, 4);
        std::vector<std::int32_t> tg(6);
        for (auto& v : tg) v = static_cast<std::int32_t>(rng.below(256));
        double expect = 0.0;
        auto d = logits.data();
        for (std::size_t t = 0; t < 6; ++t) {
            double z = 0.0;
            for (std::size_t c = 0; c < 256; ++c) z += std::exp(static_cast<double>(d[t * 256 + c]));
            expect += -(d[t * 256 + static_cast<std::size_t>(tg[t])] - std::log(z));
        }
        CHECK(nll_loss_wavenet(logits, tg).item() == doctest::Approx(expect / 6).epsilon(1e-5));
    }
    std::vector<std::int32_t> bad = {0, 1, 256, 3};
    CHECK_THROWS(nll_loss_wavenet(uniform, bad));
}

TEST_CASE("multiscale spectral loss") {
    const SpectrogramConfig cfg;
    const std::size_t T = 2048;
    std::vector<float> s(T), c(T);
    for (std::size_t t = 0; t < T; ++t) {
        s[t] = static_cast<float>(0.5 * std::sin(2.0 * M_PI * 1000.0 * t / 16000.0));
        c[t] = static_cast<float>(0.5 * std::cos(2.0 * M_PI * 1000.0 * t / 16000.0));
    }
    const Tensor x({T}, s), y({T}, c);
    CHECK(multiscale_spectral_loss(x, x, cfg).item() == 0.0f);
    CHECK(multiscale_spectral_loss(x, y, cfg).item() < 1e-2f);

    std::vector<double> zeros(1024, 0.0), impulse(1024, 0.0);
    impulse[300] = 1.0;
    const Tensor z({1024}, std::vector<float>(1024, 0.0f));
    std::vector<float> imp(1024, 0.0f);
    imp[300] = 1.0f;
    const Tensor i({1024}, imp);
    CHECK(multiscale_spectral_loss(z, i, cfg).item() ==
          doctest::Approx(spectral_loss_oracle(zeros, impulse, cfg)).epsilon(1e-4));

    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor(rng, {2, 1024}), b = random_tensor(rng, {2, 1024});
        const float ab = multiscale_spectral_loss(a, b, cfg).item(), ba = multiscale_spectral_loss(b, a, cfg).item();
        CHECK(ab == doctest::Approx(ba).epsilon(1e-6));
        CHECK(ab > 0.0f);
    }
    CHECK_THROWS_AS(multiscale_spectral_loss(z, Tensor({1025}, std::vector<float>(1025, 0.0f)), cfg), ShapeError);
    CHECK_THROWS_AS(multiscale_spectral_loss(Tensor({512}, std::vector<float>(512, 0.0f)),
                                             Tensor({512}, std::vector<float>(512, 0.0f)), cfg),
                    ShapeError);
}

TEST_CASE("harmonic plus noise synthesis") {
    const double sr = 16000.0;
    const std::size_t T = 4096, F = (T - 1) / 64 + 1;
    HarmonicNoiseParams p;
    p.f0.assign(F, 440.0f);
    p.loudness.assign(F, 1.0f);
    p.n_partials = 1;
    p.harmonic_amps.assign(F, 1.0f);
    p.n_bands = 4;
    p.noise_filter.assign(F * 4, 0.0f);
    const Tensor y = synthesize_harmonic_noise(p, sr, T);
    REQUIRE(y.numel() == T);
    const auto mag = dft_magnitude(y.data());
    const double bin_hz = sr / T;
    CHECK(std::abs(peak_bin(mag) * bin_hz - 440.0) <= bin_hz);
    for (float v : y.data()) CHECK(std::abs(v) <= 1.0f);

    HarmonicNoiseParams silent = p;
    silent.harmonic_amps.assign(F, 0.0f);
    for (float v : synthesize_harmonic_noise(silent, sr, T).data()) CHECK(v == 0.0f);

    // Partials 19.. of a 440 Hz tone are above 8 kHz and must be silent.
    HarmonicNoiseParams high = p;
    high.n_partials = 30;
    high.harmonic_amps.assign(F * 30, 0.0f);
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t k = 18; k < 30; ++k) high.harmonic_amps[f * 30 + k] = 1.0f / 12.0f;
    for (float v : synthesize_harmonic_noise(high, sr, T).data()) CHECK(v == 0.0f);

    HarmonicNoiseParams noisy = silent;
    for (std::size_t f = 0; f < F; ++f) noisy.noise_filter[f * 4 + 1] = 0.1f;
    const Tensor n = synthesize_harmonic_noise(noisy, sr, T);
    const auto nm = dft_magnitude(n.data());
    double in_band = 0.0, out_band = 0.0;
    for (std::size_t k = 0; k < nm.size(); ++k) {
        const double hz = k * bin_hz;
        if (hz > 1500.0 && hz < 3800.0) in_band += nm[k];
        if (hz < 1000.0 || hz > 4500.0) out_band += nm[k];
    }
    CHECK(in_band > 100.0 * out_band);

    HarmonicNoiseParams above = p;
    above.f0.assign(F, 9000.0f);
    CHECK_THROWS_AS(synthesize_harmonic_noise(above, sr, T), ConfigError);
    HarmonicNoiseParams ragged = p;
    ragged.loudness.pop_back();
    CHECK_THROWS_AS(synthesize_harmonic_noise(ragged, sr, T), ShapeError);
    HarmonicNoiseParams loud = p;
    loud.harmonic_amps.assign(F, 1.5f);
    CHECK_THROWS_AS(synthesize_harmonic_noise(loud, sr, T), ConfigError);
}

TEST_CASE("model shapes and parameter counts") {
    const auto wn = model_shape(ModelConfig::desk(ModelKind::tiny_wavenet));
    CHECK(wn.stacks * wn.layers_per_stack == 16);
    CHECK(wn.gate == 32);
    const auto sg = model_shape(ModelConfig::desk(ModelKind::tiny_sing));
    CHECK(sg.conv_layers == 5);
    CHECK(sg.channels == 64);
    const auto dd = model_shape(ModelConfig::desk(ModelKind::tiny_ddsp));
    CHECK(dd.hidden == 64);
    CHECK(dd.dense_layers == 2);

    const ModelConfig ddsp = ModelConfig::desk(ModelKind::tiny_ddsp);
    const Network net = build(ddsp, 1);
    CHECK(net.param_count() == closed_form_params(net));
    // gru(2 -> 64), two dense 64 -> 64, out 64 -> 1 + 32 + 65
    CHECK(net.param_count() == 3 * 64 * (2 + 64 + 1) + 2 * (64 * 64 + 64) + 64 * 98 + 98);

    const Network ref = build(ModelConfig::reference(ModelKind::tiny_wavenet), 1);
    std::size_t dilated = 0;
    for (const auto& l : ref.layers())
        if (l.name.size() > 7 && l.name.substr(l.name.size() - 7) == "_filter") ++dilated;
    CHECK(dilated == 40);

    ModelConfig tiny = ModelConfig::desk(ModelKind::tiny_sing);
    tiny.width_scale = 1e-4;
    CHECK_THROWS_AS(build(tiny, 1), ConfigError);
    tiny = ModelConfig::desk(ModelKind::tiny_ddsp);
    tiny.depth_scale = 0.1;
    CHECK_THROWS_AS(build(tiny, 1), ConfigError);
    CHECK(model_kind_from_string("tiny_sing") == ModelKind::tiny_sing);
    CHECK_THROWS_AS(model_kind_from_string("sampler"), ConfigError);
}

TEST_CASE("built models: finite outputs, trim groups, metadata") {
    for (auto kind : {ModelKind::tiny_wavenet, ModelKind::tiny_sing, ModelKind::tiny_ddsp}) {
        CAPTURE(to_string(kind));
        const ModelConfig cfg = ModelConfig::desk(kind);
        Network net = build(cfg, 11);
        Tensor zero({1, net.input_channels(), 32}, std::vector<float>(net.input_channels() * 32, 0.0f));
        const Tensor y = net.forward(zero);
        for (float v : y.data()) CHECK(std::isfinite(v));

        std::set<LayerId> grouped;
        for (const auto& g : net.trim_groups())
            for (LayerId id : g) CHECK(grouped.insert(id).second);
        const auto prot = net.protected_layers();
        for (std::size_t i = 0; i < net.size(); ++i) {
            if (!net.layer(i).is_unit_layer()) continue;
            const bool in_group = grouped.count(i) > 0;
            const bool is_prot = std::find(prot.begin(), prot.end(), i) != prot.end();
            CHECK(in_group != is_prot);
        }
        CHECK(std::find(prot.begin(), prot.end(), net.size() - 1) != prot.end());

        const ModelConfig back = model_config_from(deserialize(serialize(net)));
        CHECK(back.kind == cfg.kind);
        CHECK(back.width_scale == cfg.width_scale);
        CHECK(back.depth_scale == cfg.depth_scale);
        CHECK(samples_per_step(back) == samples_per_step(cfg));
    }
    CHECK_THROWS_AS(model_config_from(Network(3)), ConfigError);
}

TEST_CASE("all three models reduce their loss on one batch") {
    for (auto kind : {ModelKind::tiny_wavenet, ModelKind::tiny_sing, ModelKind::tiny_ddsp}) {
        ModelConfig cfg = ModelConfig::desk(kind);
        if (kind == ModelKind::tiny_wavenet) cfg.train_samples = 256;
        for (std::uint64_t seed : {1, 2, 3}) {
            CAPTURE(to_string(kind));
            CAPTURE(seed);
            const auto [first, last] = train_steps(cfg, seed, 200, 1e-3);
            CHECK(std::isfinite(last));
            CHECK(last < first);
        }
    }
}

TEST_CASE("autoregressive generation is deterministic") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_wavenet);
    const Network net = build(cfg, 4);
    const AudioExample none;
    const Tensor a = generate(net, cfg, none, 200), b = generate(net, cfg, none, 200);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    GenerateOptions sampled;
    sampled.argmax = false;
    sampled.seed = 77;
    const Tensor c = generate(net, cfg, none, 200, sampled), d = generate(net, cfg, none, 200, sampled);
    CHECK(std::equal(c.data().begin(), c.data().end(), d.data().begin()));
    for (float v : c.data()) CHECK(std::abs(v) <= 1.0f);
    CHECK_THROWS_AS(generate(net, cfg, none, 0), ConfigError);
}

TEST_CASE("harmonic controller output peaks on a harmonic of f0") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_ddsp);
    const std::size_t T = 4096;
    for (std::uint64_t seed : {1, 2, 3}) {
        const Network net = build(cfg, seed);
        const AudioExample cond = tone(440.0, 0.5, T);
        const Tensor y = generate(net, cfg, cond, T);
        REQUIRE(y.numel() == T);
        const double bin_hz = cfg.sample_rate / T;
        const double peak = peak_bin(dft_magnitude(y.data())) * bin_hz;
        const double harmonic = std::round(peak / 440.0);
        CHECK(harmonic >= 1.0);
        CHECK(std::abs(peak - harmonic * 440.0) <= 1.5 * bin_hz);
    }
}

TEST_CASE("frame autoencoder reconstructs its training item after overfitting") {
    const ModelConfig cfg = ModelConfig::desk(ModelKind::tiny_sing);
    Network net = build(cfg, 5);
    const AudioExample item = tone(250.0, 0.5, 1024);
    const AudioExample* items[] = {&item};
    const ModelBatch batch = make_batch(cfg, items);
    const double initial = model_loss(net, cfg, batch, Mode::eval).item();
    AdamConfig ac;
    ac.lr = 1e-2;
    AdamW opt(net.trainable_params(), ac);
    for (int s = 0; s < 600; ++s) {
        backward(model_loss(net, cfg, batch, Mode::train));
        opt.step();
    }
    const Tensor y = generate(net, cfg, item, 1024);
    const Tensor x({1024}, item.wave);
    CHECK(multiscale_spectral_loss(x, y).item() < initial / 10.0);
}
