#pragma once

#include <array>
#include <utility>

#include "cpcl/rng.hpp"
#include "cpcl/tensor.hpp"

namespace cpcl {

// ---------------------------------------------------------------------------
// Elementwise / scalar
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor log(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);
Tensor relu(const Tensor& a);
Tensor reciprocal(const Tensor& a);

// ---------------------------------------------------------------------------
// Reductions (sequential accumulation over memory order)
// ---------------------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------
Tensor reshape(const Tensor& a, std::vector<int> shape);
// [N,Ca,sp...] ++ [N,Cb,sp...] -> [N,Ca+Cb,sp...]
Tensor concat_channels(const Tensor& a, const Tensor& b);
// [N,C,sp...] -> [N,1,sp...]
Tensor slice_channel(const Tensor& a, int channel);

// ---------------------------------------------------------------------------
// Nonlinearities over the channel axis of [N,C,sp...]
// ---------------------------------------------------------------------------
Tensor softmax_channels(const Tensor& a);

// ---------------------------------------------------------------------------
// Spatial ops on [N,C,D,H,W]
// ---------------------------------------------------------------------------

// Cross-correlation (no kernel flip). input [N,Cin,D,H,W], kernel
// [Cout,Cin,kd,kh,kw], bias [Cout]. Differentiable w.r.t. all three.
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<int, 3> stride, std::array<int, 3> padding);
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int padding = 0);

// 2x2x2 max pooling, stride 2. Spatial dims must be even.
Tensor max_pool3d2(const Tensor& a);

// Nearest-neighbor 2x upsampling of every spatial axis.
Tensor upsample_nearest2(const Tensor& a);

// Resample to out_dims with half-pixel centers: per axis the source
// coordinate of output index t is (t + 0.5) * in/out - 0.5, clamped to
// [0, in-1], then an 8-corner trilinear blend.
Tensor trilinear_resize(const Tensor& a, std::array<int, 3> out_dims);

// ---------------------------------------------------------------------------
// Prototype primitives
// ---------------------------------------------------------------------------

// Per-voxel cosine similarity between features [K,C,D,H,W] and a single
// vector [C] -> [K,1,D,H,W]. Norms are guarded with max(||.||, 1e-8), so
// cos(a, 0) == 0. Differentiable w.r.t. both arguments.
Tensor cosine_map(const Tensor& features, const Tensor& proto);

// Mean feature vector over voxels where mask == target (mask [K,D,H,W] of
// {0,1}, features [K,C,D,H,W]): per-image masked mean, then the mean over
// images that have at least one selected voxel. Returns the [C] vector and
// the number of contributing images; zero images -> (zero vector, 0).
std::pair<Tensor, int> masked_class_mean(const Tensor& features, const Tensor& mask,
                                         float target);

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------
Tensor rand_uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                    bool requires_grad = false);
Tensor rand_normal(std::vector<int> shape, float mean, float sigma, Rng& rng,
                   bool requires_grad = false);

}  // namespace cpcl
