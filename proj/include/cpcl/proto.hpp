#pragma once

#include <array>

#include "cpcl/ops.hpp"
#include "cpcl/tensor.hpp"

namespace cpcl {

// Class prototypes pooled from a feature batch. The vectors keep their
// autodiff history, so losses through them reach the producing network.
// A support count of 0 marks a degenerate zero prototype (no image in the
// batch contained that class).
struct PrototypeSet {
    Tensor p_fg;  // [Cf]
    Tensor p_bg;  // [Cf]
    int fg_support = 0;
    int bg_support = 0;
};

// Masked average pooling against a binary mask. Features are trilinearly
// resized to the mask's grid first; per image, voxels of each class are
// averaged, then contributing images are averaged.
PrototypeSet masked_average_pool(const Tensor& features, const Tensor& mask);

// Prototype matching: resize features to out_dims, score each voxel by
// cosine distance d = 1 - cos to each prototype, and softmax over
// (-alpha * d). Channel 0 is background, channel 1 foreground.
Tensor proto_predict(const Tensor& features, const PrototypeSet& protos, float alpha,
                     std::array<int, 3> out_dims);

// Argmax over the two class channels; exact ties go to background. The
// result is a plain {0,1} volume with no autodiff history.
Tensor hard_mask(const Tensor& probs);

}  // namespace cpcl
