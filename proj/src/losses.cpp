#include "cpcl/losses.hpp"

#include <cmath>

namespace cpcl {

namespace {

void check_pair(const Tensor& probs, const Tensor& target, const char* op) {
    if (!probs.defined() || probs.ndim() != 5 || probs.dim(1) != 2) {
        throw ShapeError(std::string(op) + ": probabilities must be [N,2,D,H,W]");
    }
    if (!target.defined() || target.ndim() != 4 || target.dim(0) != probs.dim(0) ||
        target.dim(1) != probs.dim(2) || target.dim(2) != probs.dim(3) ||
        target.dim(3) != probs.dim(4)) {
        throw ShapeError(std::string(op) + ": target " +
                         (target.defined() ? shape_str(target.shape()) : std::string("undefined")) +
                         " does not match probabilities " + shape_str(probs.shape()));
    }
}

void check_binary(const Tensor& target, const char* op) {
    for (float v : target.data()) {
        if (v != 0.0f && v != 1.0f) {
            throw ValueError(std::string(op) + ": target values must be 0 or 1");
        }
    }
}

Tensor target_as_channel(const Tensor& target) {
    std::vector<float> data(target.data().begin(), target.data().end());
    return Tensor::from_data({target.dim(0), 1, target.dim(1), target.dim(2), target.dim(3)},
                             std::move(data));
}

}  // namespace

Tensor cross_entropy_loss(const Tensor& probs, const Tensor& target) {
    check_pair(probs, target, "cross_entropy_loss");
    check_binary(target, "cross_entropy_loss");
    Tensor y = target_as_channel(target);
    Tensor one_minus_y = target_as_channel(target);
    for (auto& v : one_minus_y.data_mut()) v = 1.0f - v;
    Tensor p_true = add(mul(slice_channel(probs, 1), y), mul(slice_channel(probs, 0), one_minus_y));
    return scale(mean(log(clamp(p_true, 1e-7f, 1.0f))), -1.0f);
}

Tensor dice_loss(const Tensor& probs, const Tensor& target) {
    check_pair(probs, target, "dice_loss");
    check_binary(target, "dice_loss");
    constexpr float kEps = 1e-5f;
    Tensor y = target_as_channel(target);
    Tensor p_fg = slice_channel(probs, 1);
    Tensor num = add_scalar(scale(sum(mul(p_fg, y)), 2.0f), kEps);
    Tensor den = add_scalar(add(sum(p_fg), sum(y)), kEps);
    return add_scalar(scale(mul(num, reciprocal(den)), -1.0f), 1.0f);
}

Tensor supervised_loss(const Tensor& probs, const Tensor& target) {
    check_pair(probs, target, "supervised_loss");
    const std::size_t sp = probs.numel() / (static_cast<std::size_t>(probs.dim(0)) * 2);
    const float* p = probs.data().data();
    for (int n = 0; n < probs.dim(0); ++n) {
        const float* bg = p + static_cast<std::size_t>(n) * 2 * sp;
        const float* fg = bg + sp;
        for (std::size_t v = 0; v < sp; ++v) {
            if (std::abs(bg[v] + fg[v] - 1.0f) > 1e-4f) {
                throw ValueError("supervised_loss: input is not a probability map");
            }
        }
    }
    return add(scale(cross_entropy_loss(probs, target), 0.5f),
               scale(dice_loss(probs, target), 0.5f));
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
        throw ShapeError("mse_loss: shape mismatch");
    }
    Tensor d = sub(a, b);
    return mean(mul(d, d));
}

Tensor forward_consistency_loss(const Tensor& proto_probs, const Tensor& teacher_probs) {
    const detail::Node* t = teacher_probs.node();
    if (t && (t->requires_grad || t->backward_fn)) {
        throw ValueError("forward_consistency_loss: the teacher map must carry no gradients");
    }
    return mse_loss(proto_probs, teacher_probs);
}

Tensor backward_consistency_loss(const Tensor& target, const Tensor& proto_probs) {
    return cross_entropy_loss(proto_probs, target);
}

}  // namespace cpcl
