// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/stft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "tensor_internal.hpp"
#include "ulga/fft.hpp"

namespace ulga {

void SpectrogramConfig::validate() const {
    if (window_sizes.empty()) throw ConfigError("SpectrogramConfig: no window sizes");
    for (std::size_t w : window_sizes) {
        if (!is_power_of_two(w) || w < 32 || w > 1024) {
            throw ConfigError("SpectrogramConfig: window " + std::to_string(w) +
                              " must be a power of two in [32, 1024]");
        }
    }
    if (!(hop_fraction > 0.0 && hop_fraction <= 1.0)) {
        throw ConfigError("SpectrogramConfig: hop_fraction must lie in (0, 1]");
    }
    if (!(floor_epsilon > 0.0f)) throw ConfigError("SpectrogramConfig: floor_epsilon must be positive");
}

std::size_t SpectrogramConfig::hop(std::size_t window) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(hop_fraction * static_cast<double>(window))));
}

std::size_t SpectrogramConfig::max_window() const {
    return window_sizes.empty() ? 0 : *std::max_element(window_sizes.begin(), window_sizes.end());
}

std::vector<float> hann_window(std::size_t n) {
    std::vector<float> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n)));
    }
    return w;
}

Tensor power_spectrogram(const Tensor& x, std::size_t n_fft, std::size_t hop) {
    const char* op = "power_spectrogram";
    require_defined(op, x);
    if (x.rank() != 1 && x.rank() != 2) throw ShapeError("power_spectrogram: signal must be [T] or [B,T]");
    if (hop == 0) throw ShapeError("power_spectrogram: hop must be >= 1");
    const bool flat = x.rank() == 1;
    const std::size_t batch = flat ? 1 : x.dim(0);
    const std::size_t len = x.shape().back();
    if (len < n_fft) {
        throw ShapeError("power_spectrogram: signal length " + std::to_string(len) + " shorter than window " +
                         std::to_string(n_fft));
    }
    const Fft fft(n_fft);
    const std::vector<float> win = hann_window(n_fft);
    const std::size_t frames = 1 + (len - n_fft) / hop;
    const std::size_t bins = n_fft / 2 + 1;

    std::vector<std::complex<float>> spec(batch * frames * bins);
    std::vector<float> out(batch * frames * bins);
    std::vector<std::complex<float>> buf(n_fft);
    const float* xp = x.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t f = 0; f < frames; ++f) {
            const float* src = xp + b * len + f * hop;
            for (std::size_t i = 0; i < n_fft; ++i) buf[i] = {src[i] * win[i], 0.0f};
            fft.forward(buf);
            const std::size_t base = (b * frames + f) * bins;
            for (std::size_t k = 0; k < bins; ++k) {
                spec[base + k] = buf[k];
                out[base + k] = std::norm(buf[k]);
            }
        }
    }
    Shape shape = flat ? Shape{frames, bins} : Shape{batch, frames, bins};
    Tensor res = make_result(op, std::move(shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [=, spec = std::move(spec), win = std::move(win)](detail::TensorImpl& self) {
            // d|X_k|^2/dx_m = 2 w_m Re(X_k e^{+2 pi i k m / N}), summed over one-sided bins.
            auto& gx = self.parents[0]->grad_buffer();
            const Fft plan(n_fft);
            std::vector<std::complex<float>> tmp(n_fft);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t f = 0; f < frames; ++f) {
                    const std::size_t base = (b * frames + f) * bins;
                    std::fill(tmp.begin(), tmp.end(), std::complex<float>{});
                    for (std::size_t k = 0; k < bins; ++k) tmp[k] = self.grad[base + k] * spec[base + k];
                    plan.inverse(tmp);
                    float* dst = gx.data() + b * len + f * hop;
                    for (std::size_t i = 0; i < n_fft; ++i) dst[i] += 2.0f * win[i] * tmp[i].real();
                }
            }
        };
    }
    return res;
}

std::vector<Tensor> stft_logmag(const Tensor& signal, const SpectrogramConfig& cfg) {
    cfg.validate();
    require_defined("stft_logmag", signal);
    const std::size_t len = signal.rank() == 0 ? 0 : signal.shape().back();
    for (std::size_t w : cfg.window_sizes) {
        if (len < w) {
            throw ShapeError("stft_logmag: signal length " + std::to_string(len) + " shorter than window " +
                             std::to_string(w));
        }
    }
    std::vector<Tensor> out;
    out.reserve(cfg.window_sizes.size());
    for (std::size_t w : cfg.window_sizes) {
        out.push_back(log(add_scalar(power_spectrogram(signal, w, cfg.hop(w)), cfg.floor_epsilon)));
    }
    return out;
}

}  // namespace ulga
