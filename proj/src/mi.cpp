// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/mi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ulga/common.hpp"

namespace ulga {

void MiConfig::validate() const {
    if (bin_counts.empty()) throw ConfigError("mi: bin_counts is empty");
    for (std::size_t b : bin_counts)
        if (b < 2) throw ConfigError("mi: every bin count must be >= 2");
    if (max_samples < 100) throw ConfigError("mi: max_samples must be >= 100");
    if (!(noise_sigma_relative >= 0.0) || !std::isfinite(noise_sigma_relative))
        throw ConfigError("mi: noise_sigma_relative must be finite and >= 0");
}

std::vector<double> principal_projection(std::span<const double> y, std::size_t y_dims) {
    if (y_dims == 0 || y.size() % y_dims != 0) throw ShapeError("mi: y size is not a multiple of its dimension");
    const std::size_t n = y.size() / y_dims;
    if (y_dims == 1) return {y.begin(), y.end()};
    std::vector<double> mean(y_dims, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < y_dims; ++d) mean[d] += y[i * y_dims + d];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> cov(y_dims * y_dims, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < y_dims; ++a) {
            const double da = y[i * y_dims + a] - mean[a];
            for (std::size_t b = 0; b < y_dims; ++b) cov[a * y_dims + b] += da * (y[i * y_dims + b] - mean[b]);
        }
    auto power = [&](std::vector<double> v) {
        for (int it = 0; it < 200; ++it) {
            std::vector<double> w(y_dims, 0.0);
            for (std::size_t a = 0; a < y_dims; ++a)
                for (std::size_t b = 0; b < y_dims; ++b) w[a] += cov[a * y_dims + b] * v[b];
            const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
            if (norm == 0.0) return std::vector<double>{};
            for (std::size_t a = 0; a < y_dims; ++a) v[a] = w[a] / norm;
        }
        return v;
    };
    std::vector<double> dir = power(std::vector<double>(y_dims, 1.0 / std::sqrt(static_cast<double>(y_dims))));
    for (std::size_t d = 0; dir.empty() && d < y_dims; ++d) {
        std::vector<double> e(y_dims, 0.0);
        e[d] = 1.0;
        dir = power(e);
    }
    std::vector<double> out(n, 0.0);
    if (dir.empty()) return out;
    // Deterministic sign: largest component positive.
    const auto big = std::max_element(dir.begin(), dir.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*big < 0)
        for (auto& v : dir) v = -v;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < y_dims; ++d) out[i] += (y[i * y_dims + d] - mean[d]) * dir[d];
    return out;
}

namespace {

// Rank of every value, ties sharing the lowest rank of their run.
std::vector<std::size_t> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<std::size_t> r(v.size());
    std::size_t start = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && v[order[i]] != v[order[i - 1]]) start = i;
        r[order[i]] = start;
    }
    return r;
}

bool constant(const std::vector<double>& v) {
    const double range = *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
    const double scale = std::max(std::abs(v.front()), 1.0);
    return !(range > 1e-12 * scale);
}

double plugin(const std::vector<std::size_t>& rz, const std::vector<std::size_t>& ry, std::size_t bins) {
    const std::size_t n = rz.size();
    std::vector<double> joint(bins * bins, 0.0), pz(bins, 0.0), py(bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = std::min(bins - 1, rz[i] * bins / n);
        const std::size_t b = std::min(bins - 1, ry[i] * bins / n);
        joint[a * bins + b] += 1.0;
        pz[a] += 1.0;
        py[b] += 1.0;
    }
    const double N = static_cast<double>(n);
    double mi = 0.0;
    for (std::size_t a = 0; a < bins; ++a)
        for (std::size_t b = 0; b < bins; ++b) {
            const double c = joint[a * bins + b];
            if (c > 0.0) mi += c / N * std::log(c * N / (pz[a] * py[b]));
        }
    return mi;
}

struct Prepared {
    std::vector<double> z, y;
};

Prepared prepare(std::span<const double> z, std::span<const double> y, std::size_t y_dims, const MiConfig& cfg) {
    cfg.validate();
    if (y_dims == 0 || y.size() != z.size() * y_dims)
        throw ShapeError("mi: z has " + std::to_string(z.size()) + " samples but y has " + std::to_string(y.size()) +
                         " values for dimension " + std::to_string(y_dims));
    for (double v : z)
        if (!std::isfinite(v)) throw NumericError("mi: non-finite value in z");
    for (double v : y)
        if (!std::isfinite(v)) throw NumericError("mi: non-finite value in y");
    const std::size_t n = z.size();
    const std::size_t m = std::min(n, cfg.max_samples);
    if (m < 100) throw ConfigError("mi: need at least 100 samples, got " + std::to_string(n));
    Prepared p;
    p.z.resize(m);
    std::vector<double> ys(m * y_dims);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t src = i * n / m;
        p.z[i] = z[src];
        std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(src * y_dims), y_dims,
                    ys.begin() + static_cast<std::ptrdiff_t>(i * y_dims));
    }
    p.y = principal_projection(ys, y_dims);
    if (constant(p.z)) throw ConfigError("mi: z is constant, dependency undefined");
    if (constant(p.y)) throw ConfigError("mi: y is constant, dependency undefined");
    return p;
}

double ensemble(const std::vector<double>& z, const std::vector<double>& y, const MiConfig& cfg) {
    const auto rz = ranks(z), ry = ranks(y);
    double total = 0.0;
    for (std::size_t b : cfg.bin_counts) total += plugin(rz, ry, b);
    const double mi = total / static_cast<double>(cfg.bin_counts.size());
    return cfg.clamp_nonneg ? std::max(0.0, mi) : mi;
}

}  // namespace

double estimate_mi(std::span<const double> z, std::span<const double> y, std::size_t y_dims, const MiConfig& cfg) {
    const Prepared p = prepare(z, y, y_dims, cfg);
    return ensemble(p.z, p.y, cfg);
}

double shuffle_baseline(std::span<const double> z, std::span<const double> y, std::size_t y_dims,
                        const MiConfig& cfg, std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw ConfigError("mi: shuffle baseline needs at least one trial");
    Prepared p = prepare(z, y, y_dims, cfg);
    Rng rng(seed);
    double total = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        rng.shuffle(p.y);
        total += ensemble(p.z, p.y, cfg);
    }
    return total / static_cast<double>(trials);
}

}  // namespace ulga
