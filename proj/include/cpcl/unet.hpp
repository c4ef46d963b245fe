#pragma once

#include <map>
#include <string>
#include <vector>

#include "cpcl/ops.hpp"
#include "cpcl/rng.hpp"
#include "cpcl/tensor.hpp"

namespace cpcl {

// Encoder-decoder with two 3x3x3 conv+relu blocks per level, 2x2x2 max-pool
// downsampling, nearest-upsample + conv decoding with concatenated skips,
// and a 1x1x1 head. No normalization layers.
struct UNetConfig {
    int in_channels = 1;
    int classes = 2;
    int base_channels = 8;
    int depth = 3;  // number of resolution levels; depth-1 downsamplings

    int level_channels(int level) const { return base_channels << level; }
    int feature_channels() const { return level_channels(depth - 1); }
    int spatial_divisor() const { return 1 << (depth - 1); }
    void validate() const;
};

// Parameters addressed by name; std::map keeps the order deterministic.
using ParamMap = std::map<std::string, Tensor>;

const Tensor& param(const ParamMap& params, const std::string& name);

struct UNetOutput {
    Tensor features;  // deepest encoder activation [N,Cf,D/2^(depth-1),...]
    Tensor logits;    // [N,classes,D,H,W]
    Tensor probs;     // softmax over the class axis
};

class UNet {
public:
    explicit UNet(UNetConfig config);

    const UNetConfig& config() const { return config_; }

    // Names in construction order (the order init_params draws weights in).
    std::vector<std::string> param_names() const;

    // He-style fan-in uniform kernels in +-sqrt(6/fan_in), zero biases.
    ParamMap init_params(Rng& rng) const;

    UNetOutput forward(const ParamMap& params, const Tensor& x) const;

    // Closed form:
    //   ch(i) = base*2^i
    //   encoder level 0:      27*ch0*(in + ch0)       + 2*ch0
    //   encoder level i>=1:   27*ch(i)*(ch(i-1)+ch(i)) + 2*ch(i)
    //   decoder level i:      27*ch(i)*(ch(i+1) + 3*ch(i)) + 3*ch(i)
    //   head:                 classes*(ch0 + 1)
    std::size_t parameter_count() const;

private:
    UNetConfig config_;

    struct LayerSpec {
        std::string name;
        int cin, cout, ksize, pad;
    };
    std::vector<LayerSpec> layers() const;
};

}  // namespace cpcl
