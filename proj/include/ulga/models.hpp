// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Desk-scale generative audio models: a gated dilated-convolution
// autoregressive model, a frame-based convolutional autoencoder and a
// recurrent controller for a harmonic-plus-noise synthesizer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ulga/nn.hpp"
#include "ulga/stft.hpp"

namespace ulga {

class MuLawCodec {
public:
    explicit MuLawCodec(int mu = 255);

    int mu() const { return mu_; }
    int levels() const { return mu_ + 1; }
    /// Amplitude in [-1, 1] (clamped) to class in [0, mu].
    std::int32_t encode(float x) const;
    float decode(std::int32_t c) const;
    /// Continuous companding map [-1, 1] -> [-1, 1].
    float compress(float x) const;

private:
    int mu_;
};

/// One training or evaluation item. Conditioning is frame-rate at `hop`.
struct AudioExample {
    std::vector<float> wave;
    std::vector<float> f0;        // Hz per frame
    std::vector<float> loudness;  // linear amplitude per frame
    std::size_t hop = 64;
};

struct HarmonicNoiseParams {
    std::vector<float> f0;              // Hz, [F]
    std::vector<float> loudness;        // [F]
    std::vector<float> harmonic_amps;   // [F x n_partials], row-major
    std::vector<float> noise_filter;    // [F x n_bands] band gains
    std::size_t n_partials = 0;
    std::size_t n_bands = 0;
    std::size_t hop = 64;
    std::uint64_t noise_seed = 0;
};

/// Sum of phase-accumulated harmonics of the interpolated f0, scaled by
/// loudness, plus white noise split into linear frequency bands and weighted
/// by the interpolated band gains. Clamped to [-1, 1]. Returns [length].
Tensor synthesize_harmonic_noise(const HarmonicNoiseParams& p, double sample_rate, std::size_t length);

/// Differentiable core. harm: [B, K, F] amplitudes, noise: [B, NB, F] band
/// gains, f0: B rows of F values (Hz). Returns [B, length].
Tensor harmonic_noise_core(const Tensor& harm, const Tensor& noise, const std::vector<std::vector<float>>& f0,
                           double sample_rate, std::size_t hop, std::size_t length, std::uint64_t noise_seed);

enum class ModelKind { tiny_wavenet, tiny_sing, tiny_ddsp };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

struct ModelConfig {
    ModelKind kind = ModelKind::tiny_ddsp;
    /// Multipliers on the reference channel widths and layer counts.
    double width_scale = 0.125;
    double depth_scale = 2.0 / 3.0;
    double sample_rate = 16000.0;
    int mu = 255;
    std::size_t n_partials = 32;
    std::size_t noise_bands = 65;
    std::size_t frame_hop = 64;        // conditioning frames (ddsp)
    std::size_t frame_size = 64;       // samples per frame (sing)
    std::size_t train_samples = 1024;  // crop length for autoregressive training
    std::uint64_t noise_seed = 0x5eed;

    static ModelConfig desk(ModelKind kind);
    static ModelConfig reference(ModelKind kind);
    void validate() const;
};

/// Layer sizes implied by a config.
struct ModelShape {
    std::size_t stacks = 0, layers_per_stack = 0;         // wavenet
    std::size_t residual = 0, gate = 0, skip = 0;         // wavenet
    std::size_t conv_layers = 0, channels = 0;            // sing
    std::size_t hidden = 0, dense_layers = 0;             // ddsp
};

ModelShape model_shape(const ModelConfig& cfg);

/// Audio samples produced per network time step.
std::size_t samples_per_step(const ModelConfig& cfg);

Network build(const ModelConfig& cfg, std::uint64_t seed);

/// Config stored in / recovered from network metadata.
void store_model_config(Network& net, const ModelConfig& cfg);
ModelConfig model_config_from(const Network& net);

/// Mean cross-entropy. logits: [T, levels] or [B, levels, T].
Tensor nll_loss_wavenet(const Tensor& logits, std::span<const std::int32_t> targets);

/// Sum over window sizes of the mean absolute log-spectrogram difference.
/// x, x_hat: [T] or [B, T] with equal shapes.
Tensor multiscale_spectral_loss(const Tensor& x, const Tensor& x_hat, const SpectrogramConfig& cfg = {});

/// Network input for a batch, [B, C, steps], plus what the loss needs.
struct ModelBatch {
    Tensor input;
    Tensor target;                          // [B, T] waveform
    std::vector<std::int32_t> classes;      // wavenet targets, B*T
    std::vector<std::vector<float>> f0;     // ddsp, per example
    std::size_t length = 0;                 // samples per example
};

ModelBatch make_batch(const ModelConfig& cfg, std::span<const AudioExample* const> items);

/// Waveform [B, T] from the network output on a batch (sing, ddsp).
Tensor render(const ModelConfig& cfg, const Tensor& output, const ModelBatch& batch);

/// Training/evaluation loss of the model on a batch.
Tensor model_loss(Network& net, const ModelConfig& cfg, const ModelBatch& batch, Mode mode);

struct GenerateOptions {
    bool argmax = true;
    std::uint64_t seed = 0;
};

/// Waveform of `length` samples. The autoregressive model runs step by step
/// from silence; the others map `conditioning` through the network.
Tensor generate(const Network& net, const ModelConfig& cfg, const AudioExample& conditioning, std::size_t length,
                const GenerateOptions& opt = {});

/// Frame-rate input features for the recurrent controller: [2, F].
std::vector<float> ddsp_features(const AudioExample& ex, std::size_t frames);

}  // namespace ulga
