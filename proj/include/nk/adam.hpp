#pragma once

#include <vector>

#include "nk/tensor.hpp"

namespace nk {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed list of parameter tensors. Moment slots are
// created on the first step and keyed by position.
class Adam {
public:
    explicit Adam(AdamConfig cfg);

    void set_lr(double lr);
    double lr() const { return cfg_.lr; }
    int64_t step_count() const { return step_; }

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

private:
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace nk
