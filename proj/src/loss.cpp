#include "aspvm/loss.hpp"

namespace aspvm::pipeline {

template <typename T>
Tensor<T> bce_dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred.shape(), target.shape(), "bce_dice_loss");
    auto p = clamp(pred, T(1e-7), T(1) - T(1e-7));
    auto one_minus_t = add_scalar(neg(target), T(1));
    auto one_minus_p = add_scalar(neg(p), T(1));
    auto bce = neg(mean_all(
        add(mul(target, log(p)), mul(one_minus_t, log(one_minus_p)))));

    const T eps = T(1e-5);
    auto inter = sum_all(mul(p, target));
    auto num = add_scalar(scale(inter, T(2)), eps);
    auto den = add_scalar(add(sum_all(p), sum_all(target)), eps);
    auto dice = add_scalar(neg(div(num, den)), T(1));
    return add(bce, dice);
}

template Tensor<float> bce_dice_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bce_dice_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace aspvm::pipeline
