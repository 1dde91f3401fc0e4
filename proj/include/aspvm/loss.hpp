#pragma once

#include "aspvm/ops.hpp"

namespace aspvm::pipeline {

// Binary cross entropy (pixel mean, predictions clamped to
// [1e-7, 1 - 1e-7]) plus soft Dice, equally weighted:
//   dice = 1 - (2 * sum(p*t) + eps) / (sum(p) + sum(t) + eps),  eps = 1e-5.
template <typename T>
Tensor<T> bce_dice_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace aspvm::pipeline
