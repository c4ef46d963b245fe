#pragma once

#include "cpcl/ops.hpp"
#include "cpcl/tensor.hpp"

namespace cpcl {

// Mean voxelwise -log P(true class). probs [N,2,D,H,W], target [N,D,H,W] of
// {0,1}. Probabilities are clamped to [1e-7, 1] before the log.
Tensor cross_entropy_loss(const Tensor& probs, const Tensor& target);

// 1 - (2*sum(p_fg*y) + eps) / (sum(p_fg) + sum(y) + eps), eps = 1e-5, over
// the foreground channel only.
Tensor dice_loss(const Tensor& probs, const Tensor& target);

// 0.5*CE + 0.5*Dice. Rejects inputs whose channel sums stray from 1 by more
// than 1e-4 and non-binary targets.
Tensor supervised_loss(const Tensor& probs, const Tensor& target);

// Mean squared error over all elements.
Tensor mse_loss(const Tensor& a, const Tensor& b);

// Consistency terms. The forward loss compares a prototype-based prediction
// of the unlabeled batch against the teacher's map, which must carry no
// autodiff history; the backward loss scores a prototype-based prediction of
// the labeled batch against its real labels.
Tensor forward_consistency_loss(const Tensor& proto_probs, const Tensor& teacher_probs);
Tensor backward_consistency_loss(const Tensor& target, const Tensor& proto_probs);

}  // namespace cpcl
