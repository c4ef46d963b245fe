#include "cpcl/unet.hpp"

#include <cmath>

namespace cpcl {

void UNetConfig::validate() const {
    if (in_channels < 1) throw ValueError("UNetConfig: in_channels must be >= 1");
    if (classes != 2) throw ValueError("UNetConfig: binary head only (classes == 2)");
    if (base_channels < 1) throw ValueError("UNetConfig: base_channels must be >= 1");
    if (depth < 2) throw ValueError("UNetConfig: depth must be >= 2");
}

const Tensor& param(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ValueError("missing parameter " + name);
    return it->second;
}

UNet::UNet(UNetConfig config) : config_(config) { config_.validate(); }

std::vector<UNet::LayerSpec> UNet::layers() const {
    std::vector<LayerSpec> out;
    const int d = config_.depth;
    for (int i = 0; i < d; ++i) {
        const int cin = i == 0 ? config_.in_channels : config_.level_channels(i - 1);
        const int c = config_.level_channels(i);
        out.push_back({"enc" + std::to_string(i) + ".conv1", cin, c, 3, 1});
        out.push_back({"enc" + std::to_string(i) + ".conv2", c, c, 3, 1});
    }
    for (int i = d - 2; i >= 0; --i) {
        const int c = config_.level_channels(i);
        const int cup = config_.level_channels(i + 1);
        out.push_back({"up" + std::to_string(i), cup, c, 3, 1});
        out.push_back({"dec" + std::to_string(i) + ".conv1", 2 * c, c, 3, 1});
        out.push_back({"dec" + std::to_string(i) + ".conv2", c, c, 3, 1});
    }
    out.push_back({"head", config_.level_channels(0), config_.classes, 1, 0});
    return out;
}

std::vector<std::string> UNet::param_names() const {
    std::vector<std::string> names;
    for (const auto& l : layers()) {
        names.push_back(l.name + ".w");
        names.push_back(l.name + ".b");
    }
    return names;
}

ParamMap UNet::init_params(Rng& rng) const {
    ParamMap params;
    for (const auto& l : layers()) {
        const int fan_in = l.cin * l.ksize * l.ksize * l.ksize;
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        Tensor w = rand_uniform({l.cout, l.cin, l.ksize, l.ksize, l.ksize}, -bound, bound, rng,
                                true);
        Tensor b = Tensor::zeros({l.cout}, true);
        params.emplace(l.name + ".w", w);
        params.emplace(l.name + ".b", b);
    }
    return params;
}

std::size_t UNet::parameter_count() const {
    std::size_t total = 0;
    const auto ch = [this](int i) { return static_cast<std::size_t>(config_.level_channels(i)); };
    const std::size_t in = static_cast<std::size_t>(config_.in_channels);
    total += 27 * ch(0) * (in + ch(0)) + 2 * ch(0);
    for (int i = 1; i < config_.depth; ++i) {
        total += 27 * ch(i) * (ch(i - 1) + ch(i)) + 2 * ch(i);
    }
    for (int i = config_.depth - 2; i >= 0; --i) {
        total += 27 * ch(i) * (ch(i + 1) + 3 * ch(i)) + 3 * ch(i);
    }
    total += static_cast<std::size_t>(config_.classes) * (ch(0) + 1);
    return total;
}

UNetOutput UNet::forward(const ParamMap& params, const Tensor& x) const {
    if (!x.defined() || x.ndim() != 5) {
        throw ShapeError("UNet::forward: input must be [N,C,D,H,W]");
    }
    if (x.dim(1) != config_.in_channels) {
        throw ShapeError("UNet::forward: expected " + std::to_string(config_.in_channels) +
                         " input channels, got " + std::to_string(x.dim(1)));
    }
    const int div = config_.spatial_divisor();
    for (int axis = 2; axis < 5; ++axis) {
        if (x.dim(axis) % div != 0) {
            throw ShapeError("UNet::forward: spatial dims " + shape_str(x.shape()) +
                             " not divisible by " + std::to_string(div));
        }
    }

    auto block = [&](const Tensor& in, const std::string& name) {
        return relu(conv3d(in, param(params, name + ".w"), param(params, name + ".b"), 1, 1));
    };

    std::vector<Tensor> skips;
    Tensor h = x;
    for (int i = 0; i < config_.depth; ++i) {
        if (i > 0) h = max_pool3d2(h);
        h = block(h, "enc" + std::to_string(i) + ".conv1");
        h = block(h, "enc" + std::to_string(i) + ".conv2");
        if (i < config_.depth - 1) skips.push_back(h);
    }
    Tensor features = h;

    for (int i = config_.depth - 2; i >= 0; --i) {
        h = upsample_nearest2(h);
        h = block(h, "up" + std::to_string(i));
        h = concat_channels(h, skips[static_cast<std::size_t>(i)]);
        h = block(h, "dec" + std::to_string(i) + ".conv1");
        h = block(h, "dec" + std::to_string(i) + ".conv2");
    }
    Tensor logits = conv3d(h, param(params, "head.w"), param(params, "head.b"), 1, 0);
    return {features, logits, softmax_channels(logits)};
}

}  // namespace cpcl
