#pragma once

#include <string>
#include <vector>

#include "aspvm/module.hpp"
#include "aspvm/ops.hpp"

namespace aspvm::attention {

// Spatial gate over channel-pooled maps: [max_c, mean_c] -> 7x7 conv with
// dilation 3 (padding 9 keeps the size) -> sigmoid -> x * att + x.
// One instance serves every skip stage (shared weights).
template <typename T>
class SpatialAttention {
public:
    explicit SpatialAttention(Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

private:
    Tensor<T> conv_w_, conv_b_;
};

// Channel gate across all skip stages jointly: per-stage GAP, concatenated
// into one descriptor, a k=3 conv along it, then per-stage linear + sigmoid
// gates applied residually.
template <typename T>
class ChannelAttention {
public:
    ChannelAttention(std::vector<int64_t> stage_channels, Rng& rng);

    std::vector<Tensor<T>> forward(const std::vector<Tensor<T>>& stages) const;

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

private:
    std::vector<int64_t> stage_channels_;
    Tensor<T> conv_w_, conv_b_;
    std::vector<Tensor<T>> lin_w_, lin_b_;
};

}  // namespace aspvm::attention
