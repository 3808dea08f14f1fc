// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tensor_internal.hpp"

namespace ulga {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<float>& detail::TensorImpl::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
}

void shape_fail(const char* op, const Shape& a, const Shape& b, const char* what) {
    std::ostringstream os;
    os << op << ": " << what << " (" << shape_str(a) << " vs " << shape_str(b) << ")";
    throw ShapeError(os.str());
}

void require_defined(const char* op, const Tensor& t) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor operand");
}

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

namespace {

void check_finite(const char* op, const std::vector<float>& data) {
    for (float v : data) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
    }
}

std::shared_ptr<detail::TensorImpl> finish(const char* op, Shape shape, std::vector<float> data,
                                           std::vector<std::shared_ptr<detail::TensorImpl>> parents) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError(std::string(op) + ": internal size mismatch for " + shape_str(shape));
    }
    check_finite(op, data);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->op = op;
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
    }
    return impl;
}

}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::initializer_list<const Tensor*> inputs) {
    std::vector<std::shared_ptr<detail::TensorImpl>> parents;
    parents.reserve(inputs.size());
    for (const Tensor* t : inputs) parents.push_back(t->impl_ptr());
    return Tensor(finish(op, std::move(shape), std::move(data), std::move(parents)));
}

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   const std::vector<Tensor>& inputs) {
    std::vector<std::shared_ptr<detail::TensorImpl>> parents;
    parents.reserve(inputs.size());
    for (const Tensor& t : inputs) parents.push_back(t.impl_ptr());
    return Tensor(finish(op, std::move(shape), std::move(data), std::move(parents)));
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, float fill) {
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("Tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                         shape_str(shape));
    }
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

Tensor Tensor::vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<float> values) {
    Tensor t(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    return t;
}

const Shape& Tensor::shape() const {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("dim: axis out of range for " + shape_str(shape()));
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const float> Tensor::data() const {
    if (!impl_) return {};
    return impl_->data;
}

std::span<float> Tensor::data_mut() {
    if (!impl_) return {};
    if (!impl_->is_leaf()) throw Error("data_mut: tensor produced by an op is immutable");
    return impl_->data;
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!impl_) throw Error("set_requires_grad: undefined tensor");
    if (!impl_->is_leaf()) throw Error("set_requires_grad: only leaves can change gradient tracking");
    impl_->requires_grad = flag;
    if (!flag) impl_->grad.clear();
    return *this;
}

bool Tensor::is_leaf() const { return !impl_ || impl_->is_leaf(); }

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) return {};
    return impl_->grad;
}

std::span<float> Tensor::grad_mut() {
    if (!impl_) return {};
    return impl_->grad_buffer();
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
    if (!impl_) return {};
    return Tensor(impl_->shape, impl_->data);
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    if (t.impl_) t.impl_->requires_grad = requires_grad();
    return t;
}

void Tensor::backward() const { ulga::backward(*this); }

const char* Tensor::op_name() const { return impl_ ? impl_->op : "undefined"; }

void backward(const Tensor& loss) {
    if (!loss.defined()) throw Error("backward: undefined loss");
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw Error("backward: loss is detached (no operand requires a gradient)");
    }

    // Iterative post-order DFS.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(loss.impl(), 0);
    seen.insert(loss.impl());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::TensorImpl* node : order) {
        if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0f);
    }
    loss.impl()->grad_buffer()[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (node->is_leaf()) continue;
        node->backward_fn(*node);
    }
    for (detail::TensorImpl* node : order) {
        if (!node->is_leaf()) continue;
        for (float g : node->grad) {
            if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient");
        }
    }
}

// ---------------------------------------------------------------------------
// Broadcasting binary ops

namespace {

struct Broadcast {
    Shape out;
    std::vector<std::size_t> sa, sb;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Broadcast p;
    p.out.assign(r, 1);
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    const auto sta = contiguous_strides(a);
    const auto stb = contiguous_strides(b);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t oa = r - a.size(), ob = r - b.size();
        const std::size_t da = i >= oa ? a[i - oa] : 1;
        const std::size_t db = i >= ob ? b[i - ob] : 1;
        if (da != db && da != 1 && db != 1) shape_fail(op, a, b, "shapes do not broadcast");
        p.out[i] = std::max(da, db);
        if (i >= oa && da != 1) p.sa[i] = sta[i - oa];
        if (i >= ob && db != 1) p.sb[i] = stb[i - ob];
    }
    return p;
}

template <class F>
void for_each_bcast(const Broadcast& p, F&& f) {
    const std::size_t r = p.out.size();
    if (r == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t n = shape_numel(p.out);
    if (n == 0) return;
    const std::size_t inner = p.out[r - 1], ia = p.sa[r - 1], ib = p.sb[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t o = 0; o < n; o += inner) {
        for (std::size_t t = 0; t < inner; ++t) f(o + t, oa + t * ia, ob + t * ib);
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            oa += p.sa[ax];
            ob += p.sb[ax];
            if (idx[ax] < p.out[ax]) break;
            oa -= p.sa[ax] * p.out[ax];
            ob -= p.sb[ax] * p.out[ax];
            idx[ax] = 0;
        }
    }
}

// Fwd(a, b) -> out; Da(a, b) -> d out / d a; Db likewise.
template <class Fwd, class Da, class Db>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
    require_defined(op, a);
    require_defined(op, b);
    Broadcast plan = plan_broadcast(op, a.shape(), b.shape());
    std::vector<float> out(shape_numel(plan.out));
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
    Tensor res = make_result(op, plan.out, std::move(out), {&a, &b});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [plan = std::move(plan), da, db](detail::TensorImpl& self) {
            detail::TensorImpl& A = *self.parents[0];
            detail::TensorImpl& B = *self.parents[1];
            const float* g = self.grad.data();
            const float* va = A.data.data();
            const float* vb = B.data.data();
            float* ga = A.requires_grad ? A.grad_buffer().data() : nullptr;
            float* gb = B.requires_grad ? B.grad_buffer().data() : nullptr;
            for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                if (ga) ga[ia] += g[o] * da(va[ia], vb[ib]);
                if (gb) gb[ib] += g[o] * db(va[ia], vb[ib]);
            });
        };
    }
    return res;
}

template <class Fwd, class Dfn>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Dfn dfn) {
    require_defined(op, x);
    const auto in = x.data();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    Tensor res = make_result(op, x.shape(), std::move(out), {&x});
    if (res.requires_grad()) {
        // dfn(x, y) -> dy/dx
        res.impl()->backward_fn = [dfn](detail::TensorImpl& self) {
            detail::TensorImpl& X = *self.parents[0];
            auto& gx = X.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfn(X.data[i], self.data[i]);
        };
    }
    return res;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
        [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
        [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](float x, float y) { return x * y; }, [](float, float y) { return y; },
        [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](float x, float y) { return x / y; }, [](float, float y) { return 1.0f / y; },
        [](float x, float y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, float s) {
    return unary_op(
        "add_scalar", a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor scale(const Tensor& a, float s) {
    return unary_op(
        "scale", a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        "sigmoid", x,
        [](float v) {
            // Split by sign so exp never overflows.
            if (v >= 0) return 1.0f / (1.0f + std::exp(-v));
            const float e = std::exp(v);
            return e / (1.0f + e);
        },
        [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        "tanh", x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        "exp", x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        "log", x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        "abs", x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
    return unary_op(
        "square", x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    require_defined("sum", x);
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor res = make_result("sum", Shape{}, {static_cast<float>(acc)}, {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            const float g = self.grad[0];
            for (float& v : gx) v += g;
        };
    }
    return res;
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
    require_defined("sum", x);
    const AxisView v = axis_view(x.shape(), axis, "sum");
    std::vector<float> out(v.outer * v.inner);
    const float* in = x.data().data();
    std::vector<double> acc(v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < v.n; ++k) {
            const float* row = in + (o * v.n + k) * v.inner;
            for (std::size_t i = 0; i < v.inner; ++i) acc[i] += row[i];
        }
        for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] = static_cast<float>(acc[i]);
    }
    Shape shape = x.shape();
    if (keepdim) {
        shape[axis] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    Tensor res = make_result("sum_axis", std::move(shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [v](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t o = 0; o < v.outer; ++o) {
                const float* g = self.grad.data() + o * v.inner;
                for (std::size_t k = 0; k < v.n; ++k) {
                    float* row = gx.data() + (o * v.n + k) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) row[i] += g[i];
                }
            }
        };
    }
    return res;
}

Tensor mean(const Tensor& x) {
    require_defined("mean", x);
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
    require_defined("mean", x);
    const AxisView v = axis_view(x.shape(), axis, "mean");
    if (v.n == 0) throw ShapeError("mean: empty axis");
    return scale(sum(x, axis, keepdim), 1.0f / static_cast<float>(v.n));
}

namespace {

Tensor softmax_impl(const Tensor& x, std::size_t axis, bool log_space) {
    const char* op = log_space ? "log_softmax" : "softmax";
    require_defined(op, x);
    const AxisView v = axis_view(x.shape(), axis, op);
    const float* in = x.data().data();
    std::vector<float> out(x.numel());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.n * v.inner + i;
            float mx = in[base];
            for (std::size_t k = 1; k < v.n; ++k) mx = std::max(mx, in[base + k * v.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) z += std::exp(static_cast<double>(in[base + k * v.inner] - mx));
            const double lz = std::log(z);
            for (std::size_t k = 0; k < v.n; ++k) {
                const double s = static_cast<double>(in[base + k * v.inner] - mx) - lz;
                out[base + k * v.inner] = static_cast<float>(log_space ? s : std::exp(s));
            }
        }
    }
    Tensor res = make_result(op, x.shape(), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [v, log_space](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t i = 0; i < v.inner; ++i) {
                    const std::size_t base = o * v.n * v.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t j = base + k * v.inner;
                        dot += log_space ? self.grad[j] : static_cast<double>(self.grad[j]) * self.data[j];
                    }
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t j = base + k * v.inner;
                        if (log_space) {
                            gx[j] += self.grad[j] - std::exp(self.data[j]) * static_cast<float>(dot);
                        } else {
                            gx[j] += self.data[j] * (self.grad[j] - static_cast<float>(dot));
                        }
                    }
                }
            }
        };
    }
    return res;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, axis, true); }

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
    require_defined("reshape", x);
    if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape, "element count differs");
    std::vector<float> out(x.data().begin(), x.data().end());
    Tensor res = make_result("reshape", std::move(shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        };
    }
    return res;
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
    require_defined("transpose", x);
    const std::size_t r = x.rank();
    if (axis0 >= r || axis1 >= r) throw ShapeError("transpose: axis out of range for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    std::swap(out_shape[axis0], out_shape[axis1]);
    auto in_strides = contiguous_strides(x.shape());
    std::swap(in_strides[axis0], in_strides[axis1]);
    // gather map: out flat index -> in flat index
    const std::size_t n = x.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
        src[o] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += in_strides[ax];
            if (idx[ax] < out_shape[ax]) break;
            off -= in_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    std::vector<float> out(n);
    const float* in = x.data().data();
    for (std::size_t o = 0; o < n; ++o) out[o] = in[src[o]];
    Tensor res = make_result("transpose", std::move(out_shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [src = std::move(src)](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += self.grad[o];
        };
    }
    return res;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    require_defined("slice", x);
    const AxisView v = axis_view(x.shape(), axis, "slice");
    if (begin > end || end > v.n) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis of extent " + std::to_string(v.n));
    }
    const std::size_t len = end - begin;
    std::vector<float> out(v.outer * len * v.inner);
    const float* in = x.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy_n(in + (o * v.n + begin) * v.inner, len * v.inner, out.data() + o * len * v.inner);
    }
    Shape shape = x.shape();
    shape[axis] = len;
    Tensor res = make_result("slice", std::move(shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [v, begin, len](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t o = 0; o < v.outer; ++o) {
                float* dst = gx.data() + (o * v.n + begin) * v.inner;
                const float* g = self.grad.data() + o * len * v.inner;
                for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += g[i];
            }
        };
    }
    return res;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    for (const Tensor& p : parts) require_defined("concat", p);
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != ref.size()) shape_fail("concat", ref, s, "rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != ref[i]) shape_fail("concat", ref, s, "non-concat extents differ");
        }
        total += s[axis];
    }
    Shape shape = ref;
    shape[axis] = total;
    const AxisView ov = axis_view(shape, axis, "concat");
    std::vector<float> out(shape_numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t at = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(at);
        const std::size_t n = p.dim(axis);
        const float* in = p.data().data();
        for (std::size_t o = 0; o < ov.outer; ++o) {
            std::copy_n(in + o * n * ov.inner, n * ov.inner, out.data() + (o * ov.n + at) * ov.inner);
        }
        at += n;
    }
    Tensor res = make_result("concat", std::move(shape), std::move(out), parts);
    if (res.requires_grad()) {
        res.impl()->backward_fn = [ov, offsets = std::move(offsets), axis](detail::TensorImpl& self) {
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                detail::TensorImpl& P = *self.parents[pi];
                if (!P.requires_grad) continue;
                auto& gp = P.grad_buffer();
                const std::size_t n = P.shape[axis];
                for (std::size_t o = 0; o < ov.outer; ++o) {
                    const float* g = self.grad.data() + (o * ov.n + offsets[pi]) * ov.inner;
                    float* dst = gp.data() + o * n * ov.inner;
                    for (std::size_t i = 0; i < n * ov.inner; ++i) dst[i] += g[i];
                }
            }
        };
    }
    return res;
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
    require_defined("index_select", x);
    const AxisView v = axis_view(x.shape(), axis, "index_select");
    for (std::size_t i : indices) {
        if (i >= v.n) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    const std::size_t m = idx.size();
    std::vector<float> out(v.outer * m * v.inner);
    const float* in = x.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t k = 0; k < m; ++k) {
            std::copy_n(in + (o * v.n + idx[k]) * v.inner, v.inner, out.data() + (o * m + k) * v.inner);
        }
    }
    Shape shape = x.shape();
    shape[axis] = m;
    Tensor res = make_result("index_select", std::move(shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [v, idx = std::move(idx)](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            const std::size_t m = idx.size();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t k = 0; k < m; ++k) {
                    float* dst = gx.data() + (o * v.n + idx[k]) * v.inner;
                    const float* g = self.grad.data() + (o * m + k) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) dst[i] += g[i];
                }
            }
        };
    }
    return res;
}

}  // namespace ulga
