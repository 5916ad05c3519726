#pragma once

#include <cmath>
#include <stdexcept>

#include "casdet/tensor.hpp"

namespace casdet {

// -log softmax(logits)[label], stabilized by max subtraction.
inline double softmax_cross_entropy(const Tensor& logits, int label) {
    const int k = static_cast<int>(logits.numel());
    if (label < 0 || label >= k) throw std::out_of_range("softmax_cross_entropy: label out of range");
    double mx = logits.values[0];
    for (double v : logits.values) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits.values) denom += std::exp(v - mx);
    return std::log(denom) - (logits.values[label] - mx);
}

// d(loss)/d(logits) = softmax - one_hot(label), scaled by upstream grad.
inline Tensor softmax_cross_entropy_backward(const Tensor& logits, int label, double upstream = 1.0) {
    double mx = logits.values[0];
    for (double v : logits.values) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits.values) denom += std::exp(v - mx);
    Tensor grad(logits.shape);
    for (std::size_t i = 0; i < logits.numel(); ++i)
        grad.values[i] = upstream * std::exp(logits.values[i] - mx) / denom;
    grad.values[label] -= upstream;
    return grad;
}

inline double softmax_prob(const Tensor& logits, int index) {
    double mx = logits.values[0];
    for (double v : logits.values) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits.values) denom += std::exp(v - mx);
    return std::exp(logits.values[index] - mx) / denom;
}

// Summed Huber loss: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
inline double smooth_l1(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "smooth_l1");
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = std::abs(pred.values[i] - target.values[i]);
        loss += d < 1.0 ? 0.5 * d * d : d - 0.5;
    }
    return loss;
}

inline Tensor smooth_l1_backward(const Tensor& pred, const Tensor& target, double upstream = 1.0) {
    require_same_shape(pred, target, "smooth_l1");
    Tensor grad(pred.shape);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred.values[i] - target.values[i];
        grad.values[i] = upstream * (d < -1.0 ? -1.0 : d > 1.0 ? 1.0 : d);
    }
    return grad;
}

}  // namespace casdet
