// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/fft.hpp"

#include <cmath>
#include <string>

#include "ulga/common.hpp"

namespace ulga {

Fft::Fft(std::size_t n) : n_(n) {
    if (!is_power_of_two(n)) throw ConfigError("Fft: size " + std::to_string(n) + " is not a power of two");
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    bitrev_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) {
            if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        }
        bitrev_[i] = r;
    }
    twiddle_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
        twiddle_[k] = {static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a))};
    }
}

void Fft::forward(std::span<std::complex<float>> data) const { run(data, false); }
void Fft::inverse(std::span<std::complex<float>> data) const { run(data, true); }

void Fft::run(std::span<std::complex<float>> data, bool inverse) const {
    if (data.size() != n_) throw ConfigError("Fft: buffer size does not match plan");
    for (std::size_t i = 0; i < n_; ++i) {
        if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n_ / len;
        for (std::size_t start = 0; start < n_; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const float wr = twiddle_[k * step].real();
                const float wi = inverse ? -twiddle_[k * step].imag() : twiddle_[k * step].imag();
                const std::complex<float> u = data[start + k];
                const std::complex<float> x = data[start + k + half];
                const std::complex<float> v{x.real() * wr - x.imag() * wi, x.real() * wi + x.imag() * wr};
                data[start + k] = u + v;
                data[start + k + half] = u - v;
            }
        }
    }
}

}  // namespace ulga
