// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <vector>

#include "ulga/tensor.hpp"

namespace ulga {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 2e-4;  // decoupled
};

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamW {
public:
    AdamW(std::vector<Tensor*> params, AdamConfig cfg);

    /// Apply one update from the accumulated gradients, then clear them.
    void step();
    void zero_grad();
    /// Forget moment estimates and the step count.
    void reset();

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Tensor*> params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    long step_ = 0;
};

}  // namespace ulga
