#pragma once
// Dense n-dimensional array with an optional gradient slot.
// Row-major storage, last axis fastest.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace casdet {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until requested

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), values(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != shape_numel(shape))
            throw std::invalid_argument("tensor value count does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return values.size(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
    bool has_grad() const { return grad.size() == values.size() && !values.empty(); }

    double& at(std::initializer_list<int> idx) { return values[offset(idx)]; }
    double at(std::initializer_list<int> idx) const { return values[offset(idx)]; }

    std::size_t offset(std::initializer_list<int> idx) const {
        if (idx.size() != shape.size()) throw std::invalid_argument("index rank mismatch");
        std::size_t off = 0;
        auto it = idx.begin();
        for (std::size_t d = 0; d < shape.size(); ++d, ++it) {
            if (*it < 0 || *it >= shape[d]) throw std::out_of_range("tensor index out of range");
            off = off * static_cast<std::size_t>(shape[d]) + static_cast<std::size_t>(*it);
        }
        return off;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace casdet
