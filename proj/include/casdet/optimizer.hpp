#pragma once
// Adam with bias correction and the two-phase learning-rate schedule.

#include <cmath>
#include <stdexcept>

#include "casdet/layers.hpp"

namespace casdet {

struct OptimizerConfig {
    double lr_initial = 0.5e-5;
    double lr_after = 0.5e-6;
    long lr_switch_batch = 10000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
            throw std::invalid_argument("OptimizerConfig: betas must lie in (0,1)");
        if (!(epsilon > 0.0)) throw std::invalid_argument("OptimizerConfig: epsilon must be positive");
        if (lr_after > lr_initial)
            throw std::invalid_argument("OptimizerConfig: lr_after must not exceed lr_initial");
        if (lr_switch_batch <= 0)
            throw std::invalid_argument("OptimizerConfig: lr_switch_batch must be positive");
    }
};

inline double effective_lr(const OptimizerConfig& cfg, long batch_index) {
    return batch_index < cfg.lr_switch_batch ? cfg.lr_initial : cfg.lr_after;
}

namespace detail {
inline void adam_update(Tensor& param, Tensor& m, Tensor& v, const OptimizerConfig& cfg,
                        double lr, long t) {
    if (!param.has_grad()) throw std::invalid_argument("adam_step: missing gradient");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = param.grad[i];
        m.values[i] = cfg.beta1 * m.values[i] + (1.0 - cfg.beta1) * g;
        v.values[i] = cfg.beta2 * v.values[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m.values[i] / bc1;
        const double vhat = v.values[i] / bc2;
        param.values[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}
}  // namespace detail

inline void adam_step(LayerParams& params, const OptimizerConfig& cfg, long batch_index) {
    cfg.validate();
    const double lr = effective_lr(cfg, batch_index);
    const long t = params.step_count + 1;
    detail::adam_update(params.kernels, params.adam_m_kernel, params.adam_v_kernel, cfg, lr, t);
    detail::adam_update(params.bias, params.adam_m_bias, params.adam_v_bias, cfg, lr, t);
    params.step_count = t;
}

}  // namespace casdet
