#pragma once
// Central finite-difference verification of analytic gradients.

#include <cmath>
#include <functional>
#include <vector>

#include "casdet/tensor.hpp"

namespace casdet {

struct GradCheckResult {
    double max_rel_error = 0.0;
    bool passed = false;
};

// `loss_fn` evaluates the forward pass only (deterministic, no side effects on
// the checked tensors). The tensors' .grad slots must already hold the analytic
// gradients for the unperturbed point.
inline GradCheckResult finite_difference_check(const std::function<double()>& loss_fn,
                                               const std::vector<Tensor*>& params,
                                               double tolerance = 1e-4, double step = 1e-5) {
    GradCheckResult res;
    for (Tensor* p : params) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double saved = p->values[i];
            p->values[i] = saved + step;
            const double lp = loss_fn();
            p->values[i] = saved - step;
            const double lm = loss_fn();
            p->values[i] = saved;
            const double numeric = (lp - lm) / (2.0 * step);
            const double analytic = p->has_grad() ? p->grad[i] : 0.0;
            const double denom = std::max(std::abs(numeric), 1e-6);
            const double rel = std::abs(analytic - numeric) / denom;
            res.max_rel_error = std::max(res.max_rel_error, rel);
        }
    }
    res.passed = res.max_rel_error < tolerance;
    return res;
}

}  // namespace casdet
