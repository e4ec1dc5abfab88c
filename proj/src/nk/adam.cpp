#include "nk/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace nk {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
        throw std::invalid_argument("adam: betas must lie in [0,1)");
    }
}

void Adam::set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
    cfg_.lr = lr;
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: params/grads size mismatch");
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = Tensor(params[i]->shape(), 0.0);
            v_[i] = Tensor(params[i]->shape(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter count changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& gt = *grads[i];
        if (!p.same_shape(gt) || !p.same_shape(m_[i])) throw std::invalid_argument("adam: shape mismatch");
        for (int64_t j = 0; j < p.size(); ++j) {
            const double g = gt[j];
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
            const double mh = m_[i][j] / bc1;
            const double vh = v_[i][j] / bc2;
            p[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

}  // namespace nk
