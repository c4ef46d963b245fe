#include "cpcl/proto.hpp"

namespace cpcl {

PrototypeSet masked_average_pool(const Tensor& features, const Tensor& mask) {
    if (!features.defined() || features.ndim() != 5) {
        throw ShapeError("masked_average_pool: features must be [K,Cf,d,h,w]");
    }
    if (!mask.defined() || mask.ndim() != 4) {
        throw ShapeError("masked_average_pool: mask must be [K,D,H,W]");
    }
    if (mask.dim(0) != features.dim(0)) {
        throw ShapeError("masked_average_pool: batch mismatch, features " +
                         shape_str(features.shape()) + " vs mask " + shape_str(mask.shape()));
    }
    for (float v : mask.data()) {
        if (v != 0.0f && v != 1.0f) {
            throw ValueError("masked_average_pool: mask values must be 0 or 1");
        }
    }
    Tensor resized = trilinear_resize(features, {mask.dim(1), mask.dim(2), mask.dim(3)});
    auto [p_fg, fg_n] = masked_class_mean(resized, mask, 1.0f);
    auto [p_bg, bg_n] = masked_class_mean(resized, mask, 0.0f);
    return {p_fg, p_bg, fg_n, bg_n};
}

Tensor proto_predict(const Tensor& features, const PrototypeSet& protos, float alpha,
                     std::array<int, 3> out_dims) {
    if (!features.defined() || features.ndim() != 5) {
        throw ShapeError("proto_predict: features must be [K,Cf,d,h,w]");
    }
    if (!protos.p_fg.defined() || !protos.p_bg.defined()) {
        throw ValueError("proto_predict: undefined prototypes");
    }
    if (protos.p_fg.ndim() != 1 || protos.p_bg.ndim() != 1 ||
        protos.p_fg.dim(0) != features.dim(1) || protos.p_bg.dim(0) != features.dim(1)) {
        throw ShapeError("proto_predict: prototype length must equal feature channels");
    }
    if (!(alpha > 0.0f)) throw ValueError("proto_predict: alpha must be positive");

    Tensor resized = trilinear_resize(features, out_dims);
    // logit_j = -alpha * (1 - cos_j)
    auto logit = [&](const Tensor& proto) {
        return scale(add_scalar(scale(cosine_map(resized, proto), -1.0f), 1.0f), -alpha);
    };
    return softmax_channels(concat_channels(logit(protos.p_bg), logit(protos.p_fg)));
}

Tensor hard_mask(const Tensor& probs) {
    if (!probs.defined() || probs.ndim() != 5 || probs.dim(1) != 2) {
        throw ShapeError("hard_mask: need [K,2,D,H,W], got " +
                         (probs.defined() ? shape_str(probs.shape()) : std::string("undefined")));
    }
    const std::size_t batch = static_cast<std::size_t>(probs.dim(0));
    const std::size_t sp = probs.numel() / (batch * 2);
    std::vector<float> out(batch * sp);
    const float* p = probs.data().data();
    for (std::size_t k = 0; k < batch; ++k) {
        const float* bg = p + k * 2 * sp;
        const float* fg = bg + sp;
        float* o = out.data() + k * sp;
        for (std::size_t v = 0; v < sp; ++v) o[v] = fg[v] > bg[v] ? 1.0f : 0.0f;
    }
    return Tensor::from_data({probs.dim(0), probs.dim(2), probs.dim(3), probs.dim(4)},
                             std::move(out));
}

}  // namespace cpcl
