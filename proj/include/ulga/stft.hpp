// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <vector>

#include "ulga/tensor.hpp"

namespace ulga {

struct SpectrogramConfig {
    // Five of the six powers of two in [32, 1024]; 64 is left out.
    std::vector<std::size_t> window_sizes{32, 128, 256, 512, 1024};
    double hop_fraction = 0.25;
    float floor_epsilon = 5e-3f;

    void validate() const;
    std::size_t hop(std::size_t window) const;
    std::size_t max_window() const;
};

/// Periodic Hann window of length n.
std::vector<float> hann_window(std::size_t n);

/// log(|STFT_w(signal)|^2 + eps) for every configured window. signal is [T]
/// or [B, T]; each result is [frames, w/2+1] (or batched). Differentiable.
std::vector<Tensor> stft_logmag(const Tensor& signal, const SpectrogramConfig& cfg);

}  // namespace ulga
