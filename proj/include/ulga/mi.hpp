// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Binned plug-in mutual information, averaged over several resolutions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ulga {

struct MiConfig {
    std::vector<std::size_t> bin_counts{8, 16, 32};
    /// Noise added to unit activations, relative to their standard deviation.
    double noise_sigma_relative = 0.01;
    /// Longer inputs are subsampled at an even stride.
    std::size_t max_samples = 2048;
    bool clamp_nonneg = true;

    void validate() const;
};

/// Mutual information in nats between z [N] and y [N x y_dims] (row-major).
/// y is projected on its first principal direction; both sides are rank
/// normalized and binned at every resolution.
double estimate_mi(std::span<const double> z, std::span<const double> y, std::size_t y_dims, const MiConfig& cfg = {});

/// Mean estimate over `trials` random row permutations of y.
double shuffle_baseline(std::span<const double> z, std::span<const double> y, std::size_t y_dims,
                        const MiConfig& cfg, std::size_t trials, std::uint64_t seed);

/// Projection of each row of y on the first principal direction.
std::vector<double> principal_projection(std::span<const double> y, std::size_t y_dims);

}  // namespace ulga
