#pragma once

#include <vector>

#include "aspvm/rng.hpp"
#include "aspvm/tensor.hpp"

namespace testutil {

template <typename T>
aspvm::Tensor<T> random_tensor(aspvm::Shape shape, aspvm::Rng& rng, double lo = -1.0,
                               double hi = 1.0, bool requires_grad = false) {
    std::vector<T> data(static_cast<size_t>(aspvm::numel_of(shape)));
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    auto t = aspvm::Tensor<T>::from_data(std::move(shape), std::move(data));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

template <typename T>
double max_abs_diff(const aspvm::Tensor<T>& a, const aspvm::Tensor<T>& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) -
                                 static_cast<double>(b.data()[i])));
    }
    return m;
}

template <typename T>
bool bit_equal(const aspvm::Tensor<T>& a, const aspvm::Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

}  // namespace testutil
