// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "ulga/fft.hpp"
#include "ulga/stft.hpp"
#include "ulga/tensor.hpp"

using namespace ulga;
using ulga::testing::away_from_zero;
using ulga::testing::gradcheck;
using ulga::testing::random_tensor;

namespace {

constexpr int kTrials = 100;
constexpr double kGradTol = 1e-3;

void check_op(const char* name, const std::function<std::vector<Tensor>(Rng&)>& make,
              const std::function<Tensor(const std::vector<Tensor>&)>& fn) {
    Rng rng(mix_seed(1234, std::hash<std::string>{}(name)));
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        auto leaves = make(rng);
        worst = std::max(worst, gradcheck(fn, leaves, rng.next_u64()).rel_error);
    }
    INFO(std::string(name) << " worst relative error " << worst);
    CHECK(worst < kGradTol);
}

Shape small_shape(Rng& rng, std::size_t rank) {
    Shape s(rank);
    for (auto& d : s) d = 1 + rng.below(3);
    return s;
}

}  // namespace

TEST_CASE("matmul by identity returns the left operand") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor y = matmul(a, eye);
    CHECK(y.shape() == Shape{2, 2});
    CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("causal dilated convolution with zero left padding") {
    Tensor x = Tensor::vector({1, 0, 0, 0});
    Tensor w = Tensor::vector({1, 1});
    Tensor y = conv1d_dilated_causal(x, w, 2);
    CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 0, 1, 0});
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor y = softmax(Tensor::vector({0, 0, 0, 0}), 0);
    for (float v : y.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("gradient of a quadratic") {
    Tensor w = Tensor::parameter({3}, {1, 2, 3});
    backward(sum(mul(w, w)));
    CHECK(w.grad()[0] == doctest::Approx(2));
    CHECK(w.grad()[1] == doctest::Approx(4));
    CHECK(w.grad()[2] == doctest::Approx(6));
}

TEST_CASE("gradient through matmul") {
    Tensor w = Tensor::parameter({2, 2}, {1, 1, 1, 1});
    Tensor x = Tensor::vector({1, 1});
    backward(sum(matmul(w, x)));
    for (float g : w.grad()) CHECK(g == doctest::Approx(1));
}

TEST_CASE("repeated backward accumulates and sums of losses add") {
    Rng rng(5);
    Tensor w = random_tensor(rng, {4}, -1, 1, true);
    auto l1 = [&] { return sum(square(w)); };
    auto l2 = [&] { return sum(sigmoid(w)); };
    backward(l1());
    std::vector<float> g1(w.grad().begin(), w.grad().end());
    backward(l1());
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * g1[i]));
    w.zero_grad();
    backward(l2());
    std::vector<float> g2(w.grad().begin(), w.grad().end());
    w.zero_grad();
    backward(add(l1(), l2()));
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-6));
}

TEST_CASE("errors name the op and shapes") {
    Tensor a({2, 3}), b({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), ShapeError);
    CHECK_THROWS_AS(log(Tensor::vector({-1.0f})), NumericError);
    CHECK_THROWS_AS(exp(Tensor::vector({1000.0f})), NumericError);
    Tensor w = Tensor::parameter({2}, {1, 2});
    CHECK_THROWS_AS(backward(mul(w, w)), ShapeError);
    CHECK_THROWS_AS(backward(sum(Tensor::vector({1, 2}))), Error);
    CHECK_THROWS_AS(backward(sum(mul(w, w).detach())), Error);
}

TEST_CASE("elementwise gradients match finite differences") {
    auto unary = [](double lo, double hi) {
        return [lo, hi](Rng& r) { return std::vector<Tensor>{away_from_zero(r, small_shape(r, 2), lo, hi)}; };
    };
    check_op("sigmoid", unary(0.0, 2.0), [](auto& v) { return sigmoid(v[0]); });
    check_op("tanh", unary(0.0, 2.0), [](auto& v) { return tanh(v[0]); });
    check_op("relu", unary(0.05, 2.0), [](auto& v) { return relu(v[0]); });
    check_op("exp", unary(0.0, 2.0), [](auto& v) { return exp(v[0]); });
    check_op("abs", unary(0.05, 2.0), [](auto& v) { return abs(v[0]); });
    check_op("square", unary(0.0, 2.0), [](auto& v) { return square(v[0]); });
    check_op("log", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, small_shape(r, 2), 0.2, 3.0, true)}; },
             [](auto& v) { return log(v[0]); });
    check_op("add_scalar", unary(0.0, 2.0), [](auto& v) { return add_scalar(v[0], 0.7f); });
    check_op("scale", unary(0.0, 2.0), [](auto& v) { return scale(v[0], -1.3f); });
}

TEST_CASE("broadcasting binary gradients match finite differences") {
    auto pair = [](Rng& r) {
        Shape a = small_shape(r, 3), b = a;
        for (auto& d : b)
            if (r.uniform() < 0.4) d = 1;
        if (r.uniform() < 0.3) b.erase(b.begin());
        return std::vector<Tensor>{random_tensor(r, a, -1, 1, true), away_from_zero(r, b, 0.5, 1.5)};
    };
    check_op("add", pair, [](auto& v) { return add(v[0], v[1]); });
    check_op("sub", pair, [](auto& v) { return sub(v[0], v[1]); });
    check_op("mul", pair, [](auto& v) { return mul(v[0], v[1]); });
    check_op("div", pair, [](auto& v) { return div(v[0], v[1]); });
}

TEST_CASE("reduction gradients match finite differences") {
    auto one = [](Rng& r) { return std::vector<Tensor>{random_tensor(r, small_shape(r, 3), -1, 1, true)}; };
    check_op("sum", one, [](auto& v) { return sum(v[0]); });
    check_op("mean", one, [](auto& v) { return mean(v[0]); });
    check_op("sum_axis", one, [](auto& v) { return sum(v[0], 1); });
    check_op("mean_axis", one, [](auto& v) { return mean(v[0], 2, true); });
    check_op("softmax", one, [](auto& v) { return softmax(v[0], 1); });
    check_op("log_softmax", one, [](auto& v) { return log_softmax(v[0], 2); });
}

TEST_CASE("shape op gradients match finite differences") {
    auto one = [](Rng& r) {
        Shape s{1 + r.below(3), 2 + r.below(3), 2 + r.below(3)};
        return std::vector<Tensor>{random_tensor(r, s, -1, 1, true)};
    };
    check_op("reshape", one, [](auto& v) { return reshape(v[0], {v[0].numel()}); });
    check_op("transpose", one, [](auto& v) { return transpose(v[0], 0, 2); });
    check_op("slice", one, [](auto& v) { return slice(v[0], 1, 1, v[0].dim(1)); });
    check_op("concat", one, [](auto& v) { return concat({v[0], square(v[0])}, 2); });
    check_op("index_select", one, [](auto& v) {
        std::vector<std::size_t> idx{1, 0, 1};
        return index_select(v[0], 1, idx);
    });
}

TEST_CASE("contraction gradients match finite differences") {
    check_op(
        "matmul_2d",
        [](Rng& r) {
            std::size_t m = 1 + r.below(3), k = 1 + r.below(3), n = 1 + r.below(3);
            return std::vector<Tensor>{random_tensor(r, {m, k}, -1, 1, true), random_tensor(r, {k, n}, -1, 1, true)};
        },
        [](auto& v) { return matmul(v[0], v[1]); });
    check_op(
        "matmul_batched",
        [](Rng& r) {
            std::size_t b = 1 + r.below(2), m = 1 + r.below(3), k = 1 + r.below(3), n = 1 + r.below(3);
            return std::vector<Tensor>{random_tensor(r, {m, k}, -1, 1, true),
                                       random_tensor(r, {b, k, n}, -1, 1, true)};
        },
        [](auto& v) { return matmul(v[0], v[1]); });
    check_op(
        "conv1d",
        [](Rng& r) {
            std::size_t b = 1 + r.below(2), ci = 1 + r.below(3), co = 1 + r.below(3), k = 1 + r.below(3);
            return std::vector<Tensor>{random_tensor(r, {b, ci, 5}, -1, 1, true),
                                       random_tensor(r, {co, ci, k}, -1, 1, true)};
        },
        [](auto& v) { return conv1d_dilated_causal(v[0], v[1], 2); });
    check_op(
        "upsample_linear",
        [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 2, 3}, -1, 1, true)}; },
        [](auto& v) { return upsample_linear(v[0], 4, 11); });
}

TEST_CASE("gru gradients match finite differences") {
    check_op(
        "gru_sequence",
        [](Rng& r) {
            std::size_t n_in = 1 + r.below(2), h = 1 + r.below(3);
            std::vector<Tensor> v{random_tensor(r, {2, n_in, 4}, -1, 1, true)};
            for (int g = 0; g < 3; ++g) v.push_back(random_tensor(r, {h, n_in}, -1, 1, true));
            for (int g = 0; g < 3; ++g) v.push_back(random_tensor(r, {h, h}, -1, 1, true));
            for (int g = 0; g < 3; ++g) v.push_back(random_tensor(r, {h}, -1, 1, true));
            return v;
        },
        [](auto& v) {
            GruWeights w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
            return gru_sequence(v[0], w);
        });
}

TEST_CASE("batch norm gradients match finite differences") {
    auto make = [](Rng& r) {
        std::size_t c = 1 + r.below(3);
        return std::vector<Tensor>{random_tensor(r, {3, c, 3}, -1, 1, true), random_tensor(r, {c}, 0.5, 1.5, true),
                                   random_tensor(r, {c}, -1, 1, true)};
    };
    check_op("batch_norm_train", make,
             [](auto& v) { return batch_norm(v[0], v[1], v[2], 1e-5f, nullptr); });
    check_op("batch_norm_eval", make, [](auto& v) {
        BatchStats s{std::vector<float>(v[1].numel(), 0.1f), std::vector<float>(v[1].numel(), 0.8f)};
        return batch_norm(v[0], v[1], v[2], 1e-5f, &s);
    });
}

TEST_CASE("cross entropy and spectrogram gradients match finite differences") {
    check_op(
        "softmax_cross_entropy",
        [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 5, 3}, -2, 2, true)}; },
        [](auto& v) {
            std::vector<std::int32_t> t{0, 4, 2, 1, 3, 3};
            return softmax_cross_entropy(v[0], t);
        });
    check_op(
        "power_spectrogram",
        [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 12}, -1, 1, true)}; },
        [](auto& v) { return power_spectrogram(v[0], 8, 2); });
}

TEST_CASE("cross entropy matches direct formula and rejects bad targets") {
    Rng rng(3);
    Tensor logits = random_tensor(rng, {1, 4, 2}, -2, 2);
    std::vector<std::int32_t> t{3, 1};
    double expect = 0.0;
    for (std::size_t p = 0; p < 2; ++p) {
        double z = 0.0;
        for (std::size_t c = 0; c < 4; ++c) z += std::exp(static_cast<double>(logits[c * 2 + p]));
        expect += std::log(z) - logits[static_cast<std::size_t>(t[p]) * 2 + p];
    }
    CHECK(softmax_cross_entropy(logits, t).item() == doctest::Approx(expect / 2).epsilon(1e-5));
    std::vector<std::int32_t> bad{4, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), ConfigError);
}

TEST_CASE("fft matches direct transform") {
    Rng rng(11);
    for (std::size_t n : {1u, 2u, 8u, 64u}) {
        std::vector<std::complex<float>> x(n);
        for (auto& v : x) v = {static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1))};
        auto y = x;
        Fft(n).forward(y);
        for (std::size_t k = 0; k < n; ++k) {
            std::complex<double> acc = 0;
            for (std::size_t m = 0; m < n; ++m)
                acc += std::complex<double>(x[m]) * std::polar(1.0, -2.0 * M_PI * double(k * m % n) / double(n));
            CHECK(std::abs(std::complex<double>(y[k]) - acc) < 1e-4 * (1 + std::abs(acc)));
        }
        Fft(n).inverse(y);
        for (std::size_t m = 0; m < n; ++m) CHECK(std::abs(y[m] / float(n) - x[m]) < 1e-5);
    }
    CHECK_THROWS(Fft(12));
}

TEST_CASE("log spectrogram of silence sits at the floor") {
    SpectrogramConfig cfg;
    auto specs = stft_logmag(Tensor({2048}), cfg);
    REQUIRE(specs.size() == 5);
    for (const auto& s : specs)
        for (float v : s.data()) CHECK(v == doctest::Approx(std::log(5e-3)).epsilon(1e-6));
    CHECK(std::log(5e-3) == doctest::Approx(-5.298).epsilon(1e-3));
}

TEST_CASE("bin-centred sine peaks at its bin") {
    const std::size_t n = 256, bin = 19;
    std::vector<float> x(1024);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(2.0 * M_PI * bin * t / n);
    SpectrogramConfig cfg;
    cfg.window_sizes = {256};
    auto s = stft_logmag(Tensor({x.size()}, x), cfg)[0];
    const std::size_t bins = s.dim(1);
    for (std::size_t f = 0; f < s.dim(0); ++f) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < bins; ++k)
            if (s[f * bins + k] > s[f * bins + arg]) arg = k;
        CHECK(arg == bin);
    }
}

TEST_CASE("fast spectrogram equals direct-summation DFT") {
    Rng rng(17);
    std::vector<double> xd(1100);
    std::vector<float> xf(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = xf[i] = static_cast<float>(rng.uniform(-1, 1));
    SpectrogramConfig cfg;
    for (std::size_t w : cfg.window_sizes) {
        Tensor fast = power_spectrogram(Tensor({xf.size()}, xf), w, cfg.hop(w));
        auto slow = ulga::testing::direct_power_spectrogram(xd, w, cfg.hop(w));
        REQUIRE(fast.dim(0) == slow.size());
        const std::size_t bins = fast.dim(1);
        double err = 0.0, ref = 0.0;
        for (std::size_t f = 0; f < slow.size(); ++f)
            for (std::size_t k = 0; k < bins; ++k) {
                err = std::max(err, std::abs(fast[f * bins + k] - slow[f][k]));
                ref = std::max(ref, slow[f][k]);
            }
        INFO("window " << w);
        CHECK(err / ref < 1e-4);
    }
}

TEST_CASE("impulse energy equals the direct-DFT constant") {
    for (std::size_t w : {32u, 128u, 1024u}) {
        std::vector<double> xd(2 * w, 0.0);
        xd[w] = 1.0;
        std::vector<float> xf(xd.begin(), xd.end());
        Tensor s = power_spectrogram(Tensor({xf.size()}, xf), w, w / 4);
        double fast = 0.0, slow = 0.0;
        for (float v : s.data()) fast += v;
        for (const auto& row : ulga::testing::direct_power_spectrogram(xd, w, w / 4))
            for (double v : row) slow += v;
        CHECK(fast == doctest::Approx(slow).epsilon(1e-5));
    }
}

TEST_CASE("spectrogram config validation and short signals") {
    SpectrogramConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.window_sizes = {48};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.window_sizes = {2048};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SpectrogramConfig{};
    cfg.floor_epsilon = 0.0f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    try {
        stft_logmag(Tensor({600}), SpectrogramConfig{});
        FAIL("expected error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("1024") != std::string::npos);
    }
}
