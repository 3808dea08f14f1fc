// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Dense float32 tensors with tape-free reverse-mode differentiation.
//
// Every op returns a fresh tensor. When any operand requires a gradient, the
// result keeps strong references to its operands and a closure that pushes
// its gradient back into them; `backward` walks that graph in reverse
// topological order. Leaves (tensors not produced by an op) accumulate
// gradients across calls, interior nodes are reset on every call.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ulga/common.hpp"

namespace ulga {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    std::vector<float>& grad_buffer();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor scalar(float value);
    static Tensor vector(std::vector<float> values);
    /// Leaf tensor that records gradients.
    static Tensor parameter(Shape shape, std::vector<float> values);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const float> data() const;
    /// Direct write access. Only legal on leaves (parameters, buffers).
    std::span<float> data_mut();
    float item() const;
    float operator[](std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> grad_mut();
    void zero_grad();

    /// Same values, no graph history, no gradient.
    Tensor detach() const;
    /// Deep copy as a leaf, preserving requires_grad.
    Tensor clone() const;

    void backward() const;

    const char* op_name() const;
    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_result(const char*, Shape, std::vector<float>, std::initializer_list<const Tensor*>);
    friend Tensor make_result(const char*, Shape, std::vector<float>, const std::vector<Tensor>&);

    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Populate gradients of every leaf that requires them. `loss` must be a
/// scalar produced by recorded ops.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Elementwise (numpy-style broadcasting for the binary ops)

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor scale(const Tensor& a, float s);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions and normalizations

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Gather along `axis` keeping the listed indices in order.
Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Contractions and sequence ops

/// Matrix product. Accepts [m,k]x[k,n], [m,k]x[k], and batched forms where
/// either side may be [B,...] and a 2-D side is shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Causal dilated 1-D convolution with zero left padding:
///   y[b,o,t] = sum_{i,j} w[o,i,j] * x[b,i,t-(k-1-j)*dilation]
/// x: [B,Cin,T] (or [T] with w: [k]), w: [Cout,Cin,k]. No bias.
Tensor conv1d_dilated_causal(const Tensor& x, const Tensor& w, std::size_t dilation);

/// Linear interpolation along the last axis from frame rate to sample rate.
/// Frame j sits at sample j*hop; samples past the last frame hold its value.
Tensor upsample_linear(const Tensor& x, std::size_t hop, std::size_t length);

struct GruWeights {
    Tensor w_z, w_r, w_h;  // [H, n_in]
    Tensor u_z, u_r, u_h;  // [H, H]
    Tensor b_z, b_r, b_h;  // [H]
};

/// Gated recurrent unit over x: [B, n_in, T] from a zero state. Returns every
/// hidden state, [B, H, T].
///   z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br)
///   n = tanh(Wh x + bh + r * (Uh h)),  h' = (1 - z) * n + z * h
Tensor gru_sequence(const Tensor& x, const GruWeights& w);

struct BatchStats {
    std::vector<float> mean;
    std::vector<float> var;  // biased
};

/// Per-channel normalization of x: [B, C] or [B, C, T]. With `running` set the
/// given statistics are used (eval); otherwise batch statistics are computed
/// and returned through `batch_out` when non-null.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                  const BatchStats* running, BatchStats* batch_out = nullptr);

/// Mean over positions of -log softmax(logits)[target] along axis 1.
/// logits: [B, L, T] or [B, L]; targets: B*T class ids, row-major over (B, T).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

/// |STFT|^2 with a periodic Hann window. x: [T] or [B, T]; returns
/// [frames, n_fft/2+1] or [B, frames, n_fft/2+1]; frames = 1 + (T - n_fft) / hop.
Tensor power_spectrogram(const Tensor& x, std::size_t n_fft, std::size_t hop);

}  // namespace ulga
