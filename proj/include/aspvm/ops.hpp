#pragma once

#include <vector>

#include "aspvm/tensor.hpp"

// Dense-tensor primitives with reverse-mode gradients. Canonical layouts are
// row-major B x C x H x W for images and B x L x C for sequences.
namespace aspvm {

// ---- elementwise binary (NumPy-style broadcasting) ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// ---- elementwise unary ----
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// ---- reductions ----
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim = false);

// ---- shape ----
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> std::vector<Tensor<T>> chunk(const Tensor<T>& x, int64_t n, int axis);
template <typename T> std::vector<Tensor<T>> split(const Tensor<T>& x,
                                                   const std::vector<int64_t>& sizes, int axis);
// Circular rotation of the last axis; positive shift moves element k to k-shift.
template <typename T> Tensor<T> roll_last_axis(const Tensor<T>& x, int64_t shift);
// B x C x H x W <-> B x HW x C
template <typename T> Tensor<T> image_to_seq(const Tensor<T>& x);
template <typename T> Tensor<T> seq_to_image(const Tensor<T>& x, int64_t height, int64_t width);

// ---- linear algebra ----
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., K] * w[K, N] + b[N]; bias optional (default-constructed Tensor).
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& b = Tensor<T>());

// ---- normalization / softmax ----
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                                           const Tensor<T>& beta, T eps = T(1e-5));
template <typename T> Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                                                 const Tensor<T>& beta,
                                                 std::vector<T>& running_mean,
                                                 std::vector<T>& running_var,
                                                 T momentum = T(0.1), T eps = T(1e-5));
template <typename T> Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma,
                                                 const Tensor<T>& beta,
                                                 const std::vector<T>& running_mean,
                                                 const std::vector<T>& running_var,
                                                 T eps = T(1e-5));

// ---- convolution ----
struct Conv2dSpec {
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t dilation = 1;
    int64_t groups = 1;
};
// x: B x Cin x H x W, w: Cout x Cin/groups x kh x kw, bias: Cout (optional).
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& bias, const Conv2dSpec& spec);
// Depthwise causal conv over the sequence axis of B x L x D; w: D x k, bias: D.
template <typename T> Tensor<T> conv1d_depthwise_causal(const Tensor<T>& x, const Tensor<T>& w,
                                                        const Tensor<T>& bias);
// Single-channel conv over a B x N vector batch, zero padded to keep N.
template <typename T> Tensor<T> conv1d_vector(const Tensor<T>& x, const Tensor<T>& w,
                                              const Tensor<T>& bias);

// ---- pooling / resampling (image layout) ----
template <typename T> Tensor<T> maxpool2x2(const Tensor<T>& x);
template <typename T> Tensor<T> avgpool2x2(const Tensor<T>& x);
template <typename T> Tensor<T> global_avgpool(const Tensor<T>& x);  // -> B x C
template <typename T> Tensor<T> upsample_bilinear2x(const Tensor<T>& x);
template <typename T> Tensor<T> channel_max(const Tensor<T>& x);     // -> B x 1 x H x W
template <typename T> Tensor<T> channel_mean(const Tensor<T>& x);    // -> B x 1 x H x W

}  // namespace aspvm
