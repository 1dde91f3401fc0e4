#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "aspvm/rng.hpp"
#include "aspvm/tensor.hpp"

namespace testutil {

// Central finite-difference check against reverse-mode gradients, 64-bit.
// `loss_fn` must rebuild the forward graph on every call (it reads the
// current values of `params`). Relative error uses an absolute regime below
// `tiny` so noise on near-zero gradients is not amplified.
struct GradCheck {
    double step = 1e-4;
    int64_t max_per_tensor = -1;  // -1: every element
    uint64_t seed = 7;
    double tiny = 1e-6;

    double max_rel_err = 0.0;

    double run(const std::function<aspvm::Tensor<double>()>& loss_fn,
               std::vector<aspvm::Tensor<double>> params) {
        using aspvm::Tensor;
        for (auto& p : params) p.zero_grad();
        Tensor<double> loss = loss_fn();
        loss.backward();

        std::vector<std::vector<double>> analytic;
        analytic.reserve(params.size());
        for (auto& p : params) {
            analytic.push_back(p.grad().empty() ? std::vector<double>(p.numel(), 0.0) : p.grad());
        }

        aspvm::Rng rng(seed);
        max_rel_err = 0.0;
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            const int64_t n = p.numel();
            std::vector<int64_t> indices;
            if (max_per_tensor < 0 || n <= max_per_tensor) {
                indices.resize(static_cast<size_t>(n));
                for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
            } else {
                for (int64_t i = 0; i < max_per_tensor; ++i)
                    indices.push_back(rng.uniform_int(0, n - 1));
            }
            for (int64_t idx : indices) {
                double* slot = p.data() + idx;
                const double saved = *slot;
                aspvm::NoGradGuard ng;
                *slot = saved + step;
                const double up = loss_fn().item();
                *slot = saved - step;
                const double down = loss_fn().item();
                *slot = saved;
                const double numeric = (up - down) / (2.0 * step);
                const double a = analytic[pi][static_cast<size_t>(idx)];
                const double scale = std::max(std::abs(a), std::abs(numeric));
                const double err = scale < tiny ? std::abs(a - numeric)
                                                : std::abs(a - numeric) / scale;
                if (err > max_rel_err) max_rel_err = err;
            }
        }
        return max_rel_err;
    }
};

}  // namespace testutil
