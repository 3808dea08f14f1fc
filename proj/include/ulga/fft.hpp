// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace ulga {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 complex FFT of a fixed power-of-two size.
class Fft {
public:
    explicit Fft(std::size_t n);

    std::size_t size() const { return n_; }

    /// X[k] = sum_n x[n] e^{-2 pi i k n / N}
    void forward(std::span<std::complex<float>> data) const;
    /// x[n] = sum_k X[k] e^{+2 pi i k n / N}  (unnormalized)
    void inverse(std::span<std::complex<float>> data) const;

private:
    void run(std::span<std::complex<float>> data, bool inverse) const;

    std::size_t n_;
    std::vector<std::size_t> bitrev_;
    std::vector<std::complex<float>> twiddle_;  // e^{-2 pi i k / N}, k < N/2
};

}  // namespace ulga
