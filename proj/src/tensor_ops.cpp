// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <string>

#include "tensor_internal.hpp"
#include "ulga/tensor.hpp"

namespace ulga {

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        float* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float a = A[i * k + p];
            if (a == 0.0f) continue;
            const float* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void gemm_nt(const float* dC, const float* B, float* dA, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* g = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float* b = B + p * n;
            float acc = 0.0f;
            for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
            dA[i * k + p] += acc;
        }
    }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void gemm_tn(const float* A, const float* dC, float* dB, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* g = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float a = A[i * k + p];
            if (a == 0.0f) continue;
            float* d = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) d[j] += a * g[j];
        }
    }
}

inline float sigmoidf(float v) {
    if (v >= 0) return 1.0f / (1.0f + std::exp(-v));
    const float e = std::exp(v);
    return e / (1.0f + e);
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined("matmul", a);
    require_defined("matmul", b);
    const std::size_t ra = a.rank(), rb = b.rank();
    if (ra < 2 || ra > 3 || rb < 1 || rb > 3 || (rb == 1 && ra != 2)) {
        shape_fail("matmul", a.shape(), b.shape(), "unsupported operand ranks");
    }
    const bool vec = rb == 1;
    const std::size_t m = a.dim(ra - 2), k = a.dim(ra - 1);
    const std::size_t kb = vec ? b.dim(0) : b.dim(rb - 2);
    const std::size_t n = vec ? 1 : b.dim(rb - 1);
    if (k != kb) shape_fail("matmul", a.shape(), b.shape(), "inner dimensions differ");
    const std::size_t ba = ra == 3 ? a.dim(0) : 1;
    const std::size_t bb = rb == 3 ? b.dim(0) : 1;
    if (ra == 3 && rb == 3 && ba != bb) shape_fail("matmul", a.shape(), b.shape(), "batch extents differ");
    const std::size_t batch = std::max(ba, bb);
    const std::size_t sa = ra == 3 ? m * k : 0;
    const std::size_t sb = rb == 3 ? k * n : 0;

    std::vector<float> out(batch * m * n, 0.0f);
    for (std::size_t i = 0; i < batch; ++i) {
        gemm_nn(a.data().data() + i * sa, b.data().data() + i * sb, out.data() + i * m * n, m, k, n);
    }
    Shape shape;
    if (vec) {
        shape = {m};
    } else if (ra == 3 || rb == 3) {
        shape = {batch, m, n};
    } else {
        shape = {m, n};
    }
    Tensor res = make_result("matmul", std::move(shape), std::move(out), {&a, &b});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [=](detail::TensorImpl& self) {
            detail::TensorImpl& A = *self.parents[0];
            detail::TensorImpl& B = *self.parents[1];
            for (std::size_t i = 0; i < batch; ++i) {
                const float* g = self.grad.data() + i * m * n;
                if (A.requires_grad) gemm_nt(g, B.data.data() + i * sb, A.grad_buffer().data() + i * sa, m, k, n);
                if (B.requires_grad) gemm_tn(A.data.data() + i * sa, g, B.grad_buffer().data() + i * sb, m, k, n);
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------

Tensor conv1d_dilated_causal(const Tensor& x, const Tensor& w, std::size_t dilation) {
    require_defined("conv1d_dilated_causal", x);
    require_defined("conv1d_dilated_causal", w);
    if (dilation == 0) throw ShapeError("conv1d_dilated_causal: dilation must be >= 1");
    std::size_t batch, cin, len, cout, k;
    const bool flat = x.rank() == 1;
    if (flat && w.rank() == 1) {
        batch = 1, cin = 1, cout = 1, len = x.dim(0), k = w.dim(0);
    } else if (x.rank() == 3 && w.rank() == 3) {
        batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
        cout = w.dim(0), k = w.dim(2);
        if (w.dim(1) != cin) shape_fail("conv1d_dilated_causal", x.shape(), w.shape(), "input channels differ");
    } else {
        shape_fail("conv1d_dilated_causal", x.shape(), w.shape(), "expected x [B,Cin,T] with w [Cout,Cin,k]");
    }
    if (k == 0) throw ShapeError("conv1d_dilated_causal: empty kernel");

    const float* xp = x.data().data();
    const float* wp = w.data().data();
    std::vector<float> out(batch * cout * len, 0.0f);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            float* y = out.data() + (b * cout + o) * len;
            for (std::size_t i = 0; i < cin; ++i) {
                const float* xr = xp + (b * cin + i) * len;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t shift = (k - 1 - j) * dilation;
                    if (shift >= len) continue;
                    const float wv = wp[(o * cin + i) * k + j];
                    if (wv == 0.0f) continue;
                    for (std::size_t t = shift; t < len; ++t) y[t] += wv * xr[t - shift];
                }
            }
        }
    }
    Shape shape = flat ? Shape{len} : Shape{batch, cout, len};
    Tensor res = make_result("conv1d_dilated_causal", std::move(shape), std::move(out), {&x, &w});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [=](detail::TensorImpl& self) {
            detail::TensorImpl& X = *self.parents[0];
            detail::TensorImpl& W = *self.parents[1];
            float* gx = X.requires_grad ? X.grad_buffer().data() : nullptr;
            float* gw = W.requires_grad ? W.grad_buffer().data() : nullptr;
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < cout; ++o) {
                    const float* gy = self.grad.data() + (b * cout + o) * len;
                    for (std::size_t i = 0; i < cin; ++i) {
                        const float* xr = X.data.data() + (b * cin + i) * len;
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::size_t shift = (k - 1 - j) * dilation;
                            if (shift >= len) continue;
                            const std::size_t widx = (o * cin + i) * k + j;
                            if (gx) {
                                const float wv = W.data[widx];
                                float* dxr = gx + (b * cin + i) * len;
                                for (std::size_t t = shift; t < len; ++t) dxr[t - shift] += wv * gy[t];
                            }
                            if (gw) {
                                double acc = 0.0;
                                for (std::size_t t = shift; t < len; ++t) acc += static_cast<double>(gy[t]) * xr[t - shift];
                                gw[widx] += static_cast<float>(acc);
                            }
                        }
                    }
                }
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------

Tensor upsample_linear(const Tensor& x, std::size_t hop, std::size_t length) {
    require_defined("upsample_linear", x);
    if (x.rank() == 0) throw ShapeError("upsample_linear: scalar input");
    if (hop == 0) throw ShapeError("upsample_linear: hop must be >= 1");
    const std::size_t frames = x.shape().back();
    if (frames == 0) throw ShapeError("upsample_linear: no frames");
    const std::size_t rows = x.numel() / frames;

    std::vector<std::size_t> lo(length);
    std::vector<float> frac(length);
    for (std::size_t t = 0; t < length; ++t) {
        const std::size_t j = t / hop;
        if (j + 1 >= frames) {
            lo[t] = frames - 1;
            frac[t] = 0.0f;
        } else {
            lo[t] = j;
            frac[t] = static_cast<float>(t % hop) / static_cast<float>(hop);
        }
    }
    const float* xp = x.data().data();
    std::vector<float> out(rows * length);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = xp + r * frames;
        float* dst = out.data() + r * length;
        for (std::size_t t = 0; t < length; ++t) {
            const std::size_t j = lo[t];
            const float f = frac[t];
            dst[t] = f == 0.0f ? src[j] : src[j] * (1.0f - f) + src[j + 1] * f;
        }
    }
    Shape shape = x.shape();
    shape.back() = length;
    Tensor res = make_result("upsample_linear", std::move(shape), std::move(out), {&x});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [rows, frames, length, lo = std::move(lo), frac = std::move(frac)](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                float* dst = gx.data() + r * frames;
                const float* g = self.grad.data() + r * length;
                // Samples sharing a left frame are contiguous; sum them before
                // touching the gradient buffer.
                std::size_t t = 0;
                while (t < length) {
                    const std::size_t j = lo[t];
                    float left = 0.0f, right = 0.0f;
                    for (; t < length && lo[t] == j; ++t) {
                        left += g[t] * (1.0f - frac[t]);
                        right += g[t] * frac[t];
                    }
                    dst[j] += left;
                    if (j + 1 < frames) dst[j + 1] += right;
                }
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------

Tensor gru_sequence(const Tensor& x, const GruWeights& w) {
    const char* op = "gru_sequence";
    require_defined(op, x);
    for (const Tensor* t : {&w.w_z, &w.w_r, &w.w_h, &w.u_z, &w.u_r, &w.u_h, &w.b_z, &w.b_r, &w.b_h}) {
        require_defined(op, *t);
    }
    if (x.rank() != 3) shape_fail(op, x.shape(), w.w_z.shape(), "expected x [B, n_in, T]");
    const std::size_t batch = x.dim(0), nin = x.dim(1), len = x.dim(2);
    if (w.w_z.rank() != 2) shape_fail(op, x.shape(), w.w_z.shape(), "gate matrix must be [H, n_in]");
    const std::size_t H = w.w_z.dim(0);
    for (const Tensor* t : {&w.w_z, &w.w_r, &w.w_h}) {
        if (t->shape() != Shape{H, nin}) shape_fail(op, x.shape(), t->shape(), "gate matrix must be [H, n_in]");
    }
    for (const Tensor* t : {&w.u_z, &w.u_r, &w.u_h}) {
        if (t->shape() != Shape{H, H}) shape_fail(op, Shape{H, H}, t->shape(), "recurrent matrix must be [H, H]");
    }
    for (const Tensor* t : {&w.b_z, &w.b_r, &w.b_h}) {
        if (t->shape() != Shape{H}) shape_fail(op, Shape{H}, t->shape(), "bias must be [H]");
    }

    // Time-major copy of the input: xt[b][t][i]
    std::vector<float> xt(batch * len * nin);
    const float* xp = x.data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < nin; ++i)
            for (std::size_t t = 0; t < len; ++t) xt[(b * len + t) * nin + i] = xp[(b * nin + i) * len + t];

    const float *Wz = w.w_z.data().data(), *Wr = w.w_r.data().data(), *Wh = w.w_h.data().data();
    const float *Uz = w.u_z.data().data(), *Ur = w.u_r.data().data(), *Uh = w.u_h.data().data();
    const float *bz = w.b_z.data().data(), *br = w.b_r.data().data(), *bh = w.b_h.data().data();

    const std::size_t steps = batch * len;
    std::vector<float> hs(steps * H), zs(steps * H), rs(steps * H), ns(steps * H), uhs(steps * H);
    std::vector<float> zero(H, 0.0f);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
            const std::size_t s = b * len + t;
            const float* xv = xt.data() + s * nin;
            const float* hp = t == 0 ? zero.data() : hs.data() + (s - 1) * H;
            for (std::size_t u = 0; u < H; ++u) {
                float az = bz[u], ar = br[u], ah = bh[u], uh = 0.0f;
                const float *wz = Wz + u * nin, *wr = Wr + u * nin, *wh = Wh + u * nin;
                for (std::size_t i = 0; i < nin; ++i) {
                    az += wz[i] * xv[i];
                    ar += wr[i] * xv[i];
                    ah += wh[i] * xv[i];
                }
                const float *uz = Uz + u * H, *ur = Ur + u * H, *uhr = Uh + u * H;
                for (std::size_t j = 0; j < H; ++j) {
                    az += uz[j] * hp[j];
                    ar += ur[j] * hp[j];
                    uh += uhr[j] * hp[j];
                }
                const float z = sigmoidf(az), r = sigmoidf(ar);
                const float n = std::tanh(ah + r * uh);
                const std::size_t o = s * H + u;
                zs[o] = z;
                rs[o] = r;
                ns[o] = n;
                uhs[o] = uh;
                hs[o] = (1.0f - z) * n + z * hp[u];
            }
        }
    }
    std::vector<float> out(batch * H * len);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t u = 0; u < H; ++u) out[(b * H + u) * len + t] = hs[(b * len + t) * H + u];

    Tensor res = make_result(op, Shape{batch, H, len}, std::move(out),
                             {&x, &w.w_z, &w.w_r, &w.w_h, &w.u_z, &w.u_r, &w.u_h, &w.b_z, &w.b_r, &w.b_h});
    if (res.requires_grad()) {
        res.impl()->backward_fn = [=, xt = std::move(xt), hs = std::move(hs), zs = std::move(zs), rs = std::move(rs),
                                   ns = std::move(ns), uhs = std::move(uhs)](detail::TensorImpl& self) {
            auto& P = self.parents;
            auto grad_of = [&](std::size_t i) -> float* {
                return P[i]->requires_grad ? P[i]->grad_buffer().data() : nullptr;
            };
            float* gx = grad_of(0);
            float *gWz = grad_of(1), *gWr = grad_of(2), *gWh = grad_of(3);
            float *gUz = grad_of(4), *gUr = grad_of(5), *gUh = grad_of(6);
            float *gbz = grad_of(7), *gbr = grad_of(8), *gbh = grad_of(9);
            const float *Wz = P[1]->data.data(), *Wr = P[2]->data.data(), *Wh = P[3]->data.data();
            const float *Uz = P[4]->data.data(), *Ur = P[5]->data.data(), *Uh = P[6]->data.data();

            std::vector<float> dh(H), dhp(H), dnext(H), daz(H), dar(H), dan(H), duh(H), dxv(nin);
            std::vector<float> zero(H, 0.0f);
            for (std::size_t b = 0; b < batch; ++b) {
                std::fill(dnext.begin(), dnext.end(), 0.0f);
                for (std::size_t t = len; t-- > 0;) {
                    const std::size_t s = b * len + t;
                    const float* hp = t == 0 ? zero.data() : hs.data() + (s - 1) * H;
                    const float* xv = xt.data() + s * nin;
                    for (std::size_t u = 0; u < H; ++u) {
                        dh[u] = self.grad[(b * H + u) * len + t] + dnext[u];
                        const std::size_t o = s * H + u;
                        const float z = zs[o], r = rs[o], n = ns[o];
                        const float dn = dh[u] * (1.0f - z);
                        const float dz = dh[u] * (hp[u] - n);
                        dhp[u] = dh[u] * z;
                        dan[u] = dn * (1.0f - n * n);
                        const float dr = dan[u] * uhs[o];
                        duh[u] = dan[u] * r;
                        daz[u] = dz * z * (1.0f - z);
                        dar[u] = dr * r * (1.0f - r);
                    }
                    std::fill(dxv.begin(), dxv.end(), 0.0f);
                    for (std::size_t u = 0; u < H; ++u) {
                        if (gbz) gbz[u] += daz[u];
                        if (gbr) gbr[u] += dar[u];
                        if (gbh) gbh[u] += dan[u];
                        for (std::size_t i = 0; i < nin; ++i) {
                            if (gWz) gWz[u * nin + i] += daz[u] * xv[i];
                            if (gWr) gWr[u * nin + i] += dar[u] * xv[i];
                            if (gWh) gWh[u * nin + i] += dan[u] * xv[i];
                            dxv[i] += Wz[u * nin + i] * daz[u] + Wr[u * nin + i] * dar[u] + Wh[u * nin + i] * dan[u];
                        }
                        for (std::size_t j = 0; j < H; ++j) {
                            if (gUz) gUz[u * H + j] += daz[u] * hp[j];
                            if (gUr) gUr[u * H + j] += dar[u] * hp[j];
                            if (gUh) gUh[u * H + j] += duh[u] * hp[j];
                            dhp[j] += Uz[u * H + j] * daz[u] + Ur[u * H + j] * dar[u] + Uh[u * H + j] * duh[u];
                        }
                    }
                    if (gx) {
                        for (std::size_t i = 0; i < nin; ++i) gx[(b * nin + i) * len + t] += dxv[i];
                    }
                    std::swap(dnext, dhp);
                }
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, const BatchStats* running,
                  BatchStats* batch_out) {
    const char* op = "batch_norm";
    require_defined(op, x);
    require_defined(op, gamma);
    require_defined(op, beta);
    if (x.rank() != 2 && x.rank() != 3) shape_fail(op, x.shape(), gamma.shape(), "expected x [B,C] or [B,C,T]");
    const std::size_t batch = x.dim(0), C = x.dim(1), len = x.rank() == 3 ? x.dim(2) : 1;
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        shape_fail(op, x.shape(), gamma.shape(), "gamma/beta must be [C]");
    }
    const std::size_t count = batch * len;
    if (count == 0) throw ShapeError("batch_norm: empty input");

    std::vector<float> mu(C), inv(C);
    const float* xp = x.data().data();
    if (running) {
        if (running->mean.size() != C || running->var.size() != C) {
            throw ShapeError("batch_norm: running statistics do not match channel count");
        }
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = running->mean[c];
            inv[c] = 1.0f / std::sqrt(running->var[c] + eps);
        }
    } else {
        std::vector<float> var(C);
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0, s2 = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const float* row = xp + (b * C + c) * len;
                for (std::size_t t = 0; t < len; ++t) s += row[t];
            }
            const double m = s / static_cast<double>(count);
            for (std::size_t b = 0; b < batch; ++b) {
                const float* row = xp + (b * C + c) * len;
                for (std::size_t t = 0; t < len; ++t) s2 += (row[t] - m) * (row[t] - m);
            }
            mu[c] = static_cast<float>(m);
            var[c] = static_cast<float>(s2 / static_cast<double>(count));
            inv[c] = 1.0f / std::sqrt(var[c] + eps);
        }
        if (batch_out) {
            batch_out->mean = mu;
            batch_out->var = var;
        }
    }

    const float* g = gamma.data().data();
    const float* be = beta.data().data();
    std::vector<float> xhat(x.numel()), out(x.numel());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * len;
            for (std::size_t t = 0; t < len; ++t) {
                const float h = (xp[base + t] - mu[c]) * inv[c];
                xhat[base + t] = h;
                out[base + t] = g[c] * h + be[c];
            }
        }
    }
    Tensor res = make_result(op, x.shape(), std::move(out), {&x, &gamma, &beta});
    if (res.requires_grad()) {
        const bool use_batch = running == nullptr;
        res.impl()->backward_fn = [=, xhat = std::move(xhat), inv = std::move(inv)](detail::TensorImpl& self) {
            detail::TensorImpl& X = *self.parents[0];
            detail::TensorImpl& G = *self.parents[1];
            detail::TensorImpl& Bt = *self.parents[2];
            float* gx = X.requires_grad ? X.grad_buffer().data() : nullptr;
            float* gg = G.requires_grad ? G.grad_buffer().data() : nullptr;
            float* gb = Bt.requires_grad ? Bt.grad_buffer().data() : nullptr;
            const float* dy = self.grad.data();
            for (std::size_t c = 0; c < C; ++c) {
                double sdy = 0.0, sdyx = 0.0;
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * C + c) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        sdy += dy[base + t];
                        sdyx += static_cast<double>(dy[base + t]) * xhat[base + t];
                    }
                }
                if (gg) gg[c] += static_cast<float>(sdyx);
                if (gb) gb[c] += static_cast<float>(sdy);
                if (!gx) continue;
                const float gc = G.data[c];
                const float scale_c = gc * inv[c];
                const float mdy = static_cast<float>(sdy / static_cast<double>(count));
                const float mdyx = static_cast<float>(sdyx / static_cast<double>(count));
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * C + c) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        if (use_batch) {
                            gx[base + t] += scale_c * (dy[base + t] - mdy - xhat[base + t] * mdyx);
                        } else {
                            gx[base + t] += scale_c * dy[base + t];
                        }
                    }
                }
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
    const char* op = "softmax_cross_entropy";
    require_defined(op, logits);
    if (logits.rank() != 2 && logits.rank() != 3) {
        throw ShapeError("softmax_cross_entropy: logits must be [B,L] or [B,L,T], got " + shape_str(logits.shape()));
    }
    const std::size_t batch = logits.dim(0), L = logits.dim(1), len = logits.rank() == 3 ? logits.dim(2) : 1;
    const std::size_t count = batch * len;
    if (targets.size() != count) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(count) + " positions");
    }
    if (count == 0) throw ShapeError("softmax_cross_entropy: no positions");
    for (std::int32_t t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= L) {
            throw ConfigError("softmax_cross_entropy: target " + std::to_string(t) + " out of range [0," +
                              std::to_string(L) + ")");
        }
    }
    const float* lp = logits.data().data();
    std::vector<float> prob(logits.numel());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
            const std::size_t base = b * L * len + t;
            float mx = lp[base];
            for (std::size_t c = 1; c < L; ++c) mx = std::max(mx, lp[base + c * len]);
            double z = 0.0;
            for (std::size_t c = 0; c < L; ++c) z += std::exp(static_cast<double>(lp[base + c * len] - mx));
            const double lz = std::log(z);
            for (std::size_t c = 0; c < L; ++c) {
                prob[base + c * len] = static_cast<float>(std::exp(lp[base + c * len] - mx - lz));
            }
            const std::size_t tgt = static_cast<std::size_t>(targets[b * len + t]);
            total += -(static_cast<double>(lp[base + tgt * len] - mx) - lz);
        }
    }
    const float loss = static_cast<float>(total / static_cast<double>(count));
    Tensor res = make_result(op, Shape{}, {loss}, {&logits});
    if (res.requires_grad()) {
        std::vector<std::int32_t> tg(targets.begin(), targets.end());
        res.impl()->backward_fn = [=, prob = std::move(prob), tg = std::move(tg)](detail::TensorImpl& self) {
            auto& gx = self.parents[0]->grad_buffer();
            const float g = self.grad[0] / static_cast<float>(count);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t t = 0; t < len; ++t) {
                    const std::size_t base = b * L * len + t;
                    const std::size_t tgt = static_cast<std::size_t>(tg[b * len + t]);
                    for (std::size_t c = 0; c < L; ++c) {
                        const float onehot = c == tgt ? 1.0f : 0.0f;
                        gx[base + c * len] += g * (prob[base + c * len] - onehot);
                    }
                }
            }
        };
    }
    return res;
}

}  // namespace ulga
