// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "ulga/optim.hpp"

#include <cmath>

namespace ulga {

AdamW::AdamW(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0) || !(cfg_.beta1 >= 0 && cfg_.beta1 < 1) || !(cfg_.beta2 >= 0 && cfg_.beta2 < 1) ||
        !(cfg_.eps > 0) || !(cfg_.weight_decay >= 0))
        throw ConfigError("adam: invalid hyperparameters");
    reset();
}

void AdamW::reset() {
    m_.clear();
    v_.clear();
    for (Tensor* p : params_) {
        m_.emplace_back(p->numel(), 0.0f);
        v_.emplace_back(p->numel(), 0.0f);
    }
    step_ = 0;
}

void AdamW::zero_grad() {
    for (Tensor* p : params_) p->zero_grad();
}

void AdamW::step() {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float decay = static_cast<float>(1.0 - cfg_.lr * cfg_.weight_decay);
    const float step_size = static_cast<float>(cfg_.lr / c1);
    const float inv_c2 = static_cast<float>(1.0 / std::sqrt(c2));
    const float eps = static_cast<float>(cfg_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = *params_[k];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto d = p.data_mut();
        auto& m = m_[k];
        auto& v = v_[k];
        bool finite = true;
        for (std::size_t i = 0; i < d.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            d[i] = d[i] * decay - step_size * m[i] / (std::sqrt(v[i]) * inv_c2 + eps);
            finite = finite && std::isfinite(d[i]);
        }
        if (!finite) throw NumericError("adam: parameter update produced a non-finite value");
    }
    zero_grad();
}

}  // namespace ulga
