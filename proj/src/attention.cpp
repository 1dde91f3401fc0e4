#include "aspvm/attention.hpp"

#include <cmath>

namespace aspvm::attention {

template <typename T>
SpatialAttention<T>::SpatialAttention(Rng& rng) {
    conv_w_ = init_conv2d_weight<T>(1, 2, 7, 7, rng);
    conv_b_ = init_uniform<T>({1}, 1.0 / std::sqrt(2.0 * 49.0), rng);
}

template <typename T>
Tensor<T> SpatialAttention<T>::forward(const Tensor<T>& x) const {
    auto pooled = concat(std::vector<Tensor<T>>{channel_max(x), channel_mean(x)}, 1);
    auto att = sigmoid(
        conv2d(pooled, conv_w_, conv_b_, {.stride = 1, .padding = 9, .dilation = 3}));
    return add(mul(x, att), x);
}

template <typename T>
void SpatialAttention<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add(prefix + ".conv.weight", conv_w_);
    reg.add(prefix + ".conv.bias", conv_b_);
}

template <typename T>
int64_t SpatialAttention<T>::param_count() const {
    return conv_w_.numel() + conv_b_.numel();
}

template <typename T>
ChannelAttention<T>::ChannelAttention(std::vector<int64_t> stage_channels, Rng& rng)
    : stage_channels_(std::move(stage_channels)) {
    if (stage_channels_.size() != 5) {
        throw ConfigError("ChannelAttention: expected 5 skip stages, got " +
                          std::to_string(stage_channels_.size()));
    }
    conv_w_ = init_uniform<T>({3}, 1.0 / std::sqrt(3.0), rng);
    conv_b_ = init_uniform<T>({1}, 1.0 / std::sqrt(3.0), rng);
    for (int64_t c : stage_channels_) {
        lin_w_.push_back(init_linear_weight<T>(c, c, rng));
        lin_b_.push_back(init_linear_bias<T>(c, c, rng));
    }
}

template <typename T>
std::vector<Tensor<T>> ChannelAttention<T>::forward(const std::vector<Tensor<T>>& stages) const {
    if (stages.size() != 5) {
        throw ConfigError("ChannelAttention: expected 5 skip stages, got " +
                          std::to_string(stages.size()));
    }
    std::vector<Tensor<T>> pooled;
    for (size_t k = 0; k < 5; ++k) {
        if (stages[k].dim(1) != stage_channels_[k]) {
            throw DimensionError("ChannelAttention: stage " + std::to_string(k + 1) + " has " +
                                 std::to_string(stages[k].dim(1)) + " channels, expected " +
                                 std::to_string(stage_channels_[k]));
        }
        if (k > 0 && (stages[k].dim(2) >= stages[k - 1].dim(2) ||
                      stages[k].dim(3) >= stages[k - 1].dim(3))) {
            throw DimensionError("ChannelAttention: stage sizes must strictly decrease");
        }
        pooled.push_back(global_avgpool(stages[k]));  // B x C_k
    }
    auto mixed = conv1d_vector(concat(pooled, 1), conv_w_, conv_b_);
    auto parts = split(mixed, stage_channels_, 1);
    std::vector<Tensor<T>> out;
    for (size_t k = 0; k < 5; ++k) {
        auto att = sigmoid(linear(parts[k], lin_w_[k], lin_b_[k]));
        auto gate = reshape(att, {stages[k].dim(0), stage_channels_[k], 1, 1});
        out.push_back(add(mul(stages[k], gate), stages[k]));
    }
    return out;
}

template <typename T>
void ChannelAttention<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add(prefix + ".conv.weight", conv_w_);
    reg.add(prefix + ".conv.bias", conv_b_);
    for (size_t k = 0; k < lin_w_.size(); ++k) {
        reg.add(prefix + ".stage" + std::to_string(k + 1) + ".weight", lin_w_[k]);
        reg.add(prefix + ".stage" + std::to_string(k + 1) + ".bias", lin_b_[k]);
    }
}

template <typename T>
int64_t ChannelAttention<T>::param_count() const {
    int64_t n = conv_w_.numel() + conv_b_.numel();
    for (const auto& w : lin_w_) n += w.numel();
    for (const auto& b : lin_b_) n += b.numel();
    return n;
}

template class SpatialAttention<float>;
template class SpatialAttention<double>;
template class ChannelAttention<float>;
template class ChannelAttention<double>;

}  // namespace aspvm::attention
