#include "cpcl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cpcl {

using detail::Node;
using detail::ensure_grad;

namespace {

std::shared_ptr<Node> alloc(std::vector<int> shape) {
    auto n = std::make_shared<Node>();
    std::size_t count = shape_numel(shape);
    n->shape = std::move(shape);
    n->data.resize(count);
    return n;
}

bool tracked(const Tensor& t) {
    const Node* n = t.node();
    return n && (n->requires_grad || n->backward_fn);
}

void attach(const std::shared_ptr<Node>& out, std::vector<std::shared_ptr<Node>> parents,
            std::function<void(Node&)> fn) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
    out->seq = detail::next_seq();
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ValueError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check_defined(a, op);
    check_defined(b, op);
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

// Spatial voxel count of [N,C,sp...].
std::size_t spatial_numel(const Tensor& t, const char* op) {
    if (t.ndim() < 2) throw ShapeError(std::string(op) + ": need [N,C,...], got " + shape_str(t.shape()));
    return t.numel() / (static_cast<std::size_t>(t.dim(0)) * static_cast<std::size_t>(t.dim(1)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (tracked(a) || tracked(b)) {
        attach(out, {a.node_ptr(), b.node_ptr()}, [](Node& self) {
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            for (int side = 0; side < 2; ++side) {
                Node& p = *self.parents[static_cast<std::size_t>(side)];
                if (!p.requires_grad) continue;
                float* gp = ensure_grad(p).data();
                for (std::size_t i = 0; i < count; ++i) gp[i] += g[i];
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (tracked(a) || tracked(b)) {
        attach(out, {a.node_ptr(), b.node_ptr()}, [](Node& self) {
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            Node& pa_ = *self.parents[0];
            Node& pb_ = *self.parents[1];
            if (pa_.requires_grad) {
                float* gp = ensure_grad(pa_).data();
                for (std::size_t i = 0; i < count; ++i) gp[i] += g[i];
            }
            if (pb_.requires_grad) {
                float* gp = ensure_grad(pb_).data();
                for (std::size_t i = 0; i < count; ++i) gp[i] -= g[i];
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (tracked(a) || tracked(b)) {
        attach(out, {a.node_ptr(), b.node_ptr()}, [](Node& self) {
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            Node& pa_ = *self.parents[0];
            Node& pb_ = *self.parents[1];
            if (pa_.requires_grad) {
                float* gp = ensure_grad(pa_).data();
                const float* other = pb_.data.data();
                for (std::size_t i = 0; i < count; ++i) gp[i] += g[i] * other[i];
            }
            if (pb_.requires_grad) {
                float* gp = ensure_grad(pb_).data();
                const float* other = pa_.data.data();
                for (std::size_t i = 0; i < count; ++i) gp[i] += g[i] * other[i];
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor scale(const Tensor& a, float c) {
    check_defined(a, "scale");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = c * pa[i];
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [c](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] += c * g[i];
        });
    }
    return Tensor::wrap(out);
}

Tensor add_scalar(const Tensor& a, float c) {
    check_defined(a, "add_scalar");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + c;
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] += g[i];
        });
    }
    return Tensor::wrap(out);
}

Tensor log(const Tensor& a) {
    check_defined(a, "log");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = std::log(pa[i]);
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            const float* x = p.data.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] += g[i] / x[i];
        });
    }
    return Tensor::wrap(out);
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    check_defined(a, "clamp");
    if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = std::min(std::max(pa[i], lo), hi);
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [lo, hi](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            const float* x = p.data.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) {
                if (x[i] >= lo && x[i] <= hi) gp[i] += g[i];
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor relu(const Tensor& a) {
    check_defined(a, "relu");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            const float* x = p.data.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) {
                if (x[i] > 0.0f) gp[i] += g[i];
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor reciprocal(const Tensor& a) {
    check_defined(a, "reciprocal");
    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = 1.0f / pa[i];
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            const float* y = self.data.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] -= g[i] * y[i] * y[i];
        });
    }
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    check_defined(a, "sum");
    float acc = 0.0f;
    for (float v : a.data()) acc += v;
    auto out = alloc({1});
    out->data[0] = acc;
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            float g = self.grad[0];
            std::size_t count = p.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] += g;
        });
    }
    return Tensor::wrap(out);
}

Tensor mean(const Tensor& a) {
    check_defined(a, "mean");
    float acc = 0.0f;
    for (float v : a.data()) acc += v;
    float inv = 1.0f / static_cast<float>(a.numel());
    auto out = alloc({1});
    out->data[0] = acc * inv;
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [inv](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            float g = self.grad[0] * inv;
            std::size_t count = p.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] += g;
        });
    }
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    check_defined(a, "reshape");
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    auto out = alloc(std::move(shape));
    std::memcpy(out->data.data(), a.data().data(), a.numel() * sizeof(float));
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) gp[i] += g[i];
        });
    }
    return Tensor::wrap(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_defined(a, "concat_channels");
    check_defined(b, "concat_channels");
    if (a.ndim() != b.ndim() || a.ndim() < 2) {
        throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    for (int i = 0; i < a.ndim(); ++i) {
        if (i != 1 && a.dim(i) != b.dim(i)) {
            throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
    std::vector<int> out_shape = a.shape();
    out_shape[1] = a.dim(1) + b.dim(1);
    auto out = alloc(out_shape);

    const std::size_t batch = static_cast<std::size_t>(a.dim(0));
    const std::size_t sp = spatial_numel(a, "concat_channels");
    const std::size_t ca = static_cast<std::size_t>(a.dim(1)) * sp;
    const std::size_t cb = static_cast<std::size_t>(b.dim(1)) * sp;
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    for (std::size_t n = 0; n < batch; ++n) {
        std::memcpy(po + n * (ca + cb), pa + n * ca, ca * sizeof(float));
        std::memcpy(po + n * (ca + cb) + ca, pb + n * cb, cb * sizeof(float));
    }
    if (tracked(a) || tracked(b)) {
        attach(out, {a.node_ptr(), b.node_ptr()}, [batch, ca, cb](Node& self) {
            const float* g = self.grad.data();
            Node& pa_ = *self.parents[0];
            Node& pb_ = *self.parents[1];
            for (std::size_t n = 0; n < batch; ++n) {
                const float* gn = g + n * (ca + cb);
                if (pa_.requires_grad) {
                    float* gp = ensure_grad(pa_).data() + n * ca;
                    for (std::size_t i = 0; i < ca; ++i) gp[i] += gn[i];
                }
                if (pb_.requires_grad) {
                    float* gp = ensure_grad(pb_).data() + n * cb;
                    for (std::size_t i = 0; i < cb; ++i) gp[i] += gn[ca + i];
                }
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor slice_channel(const Tensor& a, int channel) {
    check_defined(a, "slice_channel");
    if (a.ndim() < 2) throw ShapeError("slice_channel: need [N,C,...], got " + shape_str(a.shape()));
    if (channel < 0 || channel >= a.dim(1)) {
        throw ShapeError("slice_channel: channel " + std::to_string(channel) + " of " + shape_str(a.shape()));
    }
    std::vector<int> out_shape = a.shape();
    out_shape[1] = 1;
    auto out = alloc(out_shape);

    const std::size_t batch = static_cast<std::size_t>(a.dim(0));
    const std::size_t channels = static_cast<std::size_t>(a.dim(1));
    const std::size_t sp = spatial_numel(a, "slice_channel");
    const float* pa = a.data().data();
    float* po = out->data.data();
    const std::size_t c = static_cast<std::size_t>(channel);
    for (std::size_t n = 0; n < batch; ++n) {
        std::memcpy(po + n * sp, pa + (n * channels + c) * sp, sp * sizeof(float));
    }
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [batch, channels, sp, c](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            for (std::size_t n = 0; n < batch; ++n) {
                float* dst = gp + (n * channels + c) * sp;
                const float* src = g + n * sp;
                for (std::size_t i = 0; i < sp; ++i) dst[i] += src[i];
            }
        });
    }
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// Softmax over the channel axis
// ---------------------------------------------------------------------------

Tensor softmax_channels(const Tensor& a) {
    check_defined(a, "softmax_channels");
    if (a.ndim() < 2) throw ShapeError("softmax_channels: need [N,C,...], got " + shape_str(a.shape()));
    const std::size_t batch = static_cast<std::size_t>(a.dim(0));
    const std::size_t channels = static_cast<std::size_t>(a.dim(1));
    const std::size_t sp = spatial_numel(a, "softmax_channels");

    auto out = alloc(a.shape());
    const float* pa = a.data().data();
    float* po = out->data.data();
    for (std::size_t n = 0; n < batch; ++n) {
        const float* xb = pa + n * channels * sp;
        float* ob = po + n * channels * sp;
        for (std::size_t v = 0; v < sp; ++v) {
            float mx = xb[v];
            for (std::size_t c = 1; c < channels; ++c) mx = std::max(mx, xb[c * sp + v]);
            float denom = 0.0f;
            for (std::size_t c = 0; c < channels; ++c) {
                float e = std::exp(xb[c * sp + v] - mx);
                ob[c * sp + v] = e;
                denom += e;
            }
            float inv = 1.0f / denom;
            for (std::size_t c = 0; c < channels; ++c) ob[c * sp + v] *= inv;
        }
    }
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [batch, channels, sp](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            const float* y = self.data.data();
            for (std::size_t n = 0; n < batch; ++n) {
                const std::size_t base = n * channels * sp;
                for (std::size_t v = 0; v < sp; ++v) {
                    float dot = 0.0f;
                    for (std::size_t c = 0; c < channels; ++c) {
                        std::size_t i = base + c * sp + v;
                        dot += g[i] * y[i];
                    }
                    for (std::size_t c = 0; c < channels; ++c) {
                        std::size_t i = base + c * sp + v;
                        gp[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// Prototype primitives
// ---------------------------------------------------------------------------

Tensor cosine_map(const Tensor& features, const Tensor& proto) {
    check_defined(features, "cosine_map");
    check_defined(proto, "cosine_map");
    if (features.ndim() != 5) {
        throw ShapeError("cosine_map: features must be [K,C,D,H,W], got " + shape_str(features.shape()));
    }
    if (proto.ndim() != 1) {
        throw ShapeError("cosine_map: prototype must be [C], got " + shape_str(proto.shape()));
    }
    if (proto.dim(0) != features.dim(1)) {
        throw ShapeError("cosine_map: prototype length " + std::to_string(proto.dim(0)) +
                         " vs feature channels " + std::to_string(features.dim(1)));
    }
    constexpr float kEps = 1e-8f;
    const std::size_t batch = static_cast<std::size_t>(features.dim(0));
    const std::size_t channels = static_cast<std::size_t>(features.dim(1));
    const std::size_t sp = features.numel() / (batch * channels);

    auto out = alloc({features.dim(0), 1, features.dim(2), features.dim(3), features.dim(4)});
    const float* pf = features.data().data();
    const float* pp = proto.data().data();

    float pn = 0.0f;
    for (std::size_t c = 0; c < channels; ++c) pn += pp[c] * pp[c];
    pn = std::sqrt(pn);
    const float pnorm = std::max(pn, kEps);

    float* po = out->data.data();
    for (std::size_t k = 0; k < batch; ++k) {
        const float* fb = pf + k * channels * sp;
        float* ob = po + k * sp;
        for (std::size_t v = 0; v < sp; ++v) {
            float dot = 0.0f, sq = 0.0f;
            for (std::size_t c = 0; c < channels; ++c) {
                float f = fb[c * sp + v];
                dot += f * pp[c];
                sq += f * f;
            }
            float fnorm = std::max(std::sqrt(sq), kEps);
            ob[v] = dot / (fnorm * pnorm);
        }
    }
    if (tracked(features) || tracked(proto)) {
        attach(out, {features.node_ptr(), proto.node_ptr()},
               [batch, channels, sp, pnorm, pn](Node& self) {
                   Node& fnode = *self.parents[0];
                   Node& pnode = *self.parents[1];
                   const float* g = self.grad.data();
                   const float* pf_ = fnode.data.data();
                   const float* pp_ = pnode.data.data();
                   const float* y = self.data.data();
                   float* gf = fnode.requires_grad ? ensure_grad(fnode).data() : nullptr;
                   float* gp = pnode.requires_grad ? ensure_grad(pnode).data() : nullptr;
                   constexpr float kEps2 = 1e-8f;
                   for (std::size_t k = 0; k < batch; ++k) {
                       const float* fb = pf_ + k * channels * sp;
                       const float* gb = g + k * sp;
                       const float* yb = y + k * sp;
                       for (std::size_t v = 0; v < sp; ++v) {
                           float gv = gb[v];
                           if (gv == 0.0f) continue;
                           float sq = 0.0f;
                           for (std::size_t c = 0; c < channels; ++c) {
                               float f = fb[c * sp + v];
                               sq += f * f;
                           }
                           float fn = std::sqrt(sq);
                           float fnorm = std::max(fn, kEps2);
                           float inv_fp = 1.0f / (fnorm * pnorm);
                           float cosv = yb[v];
                           if (gf) {
                               float* gfb = gf + k * channels * sp;
                               float coef = fn > kEps2 ? cosv / (fnorm * fnorm) : 0.0f;
                               for (std::size_t c = 0; c < channels; ++c) {
                                   gfb[c * sp + v] += gv * (pp_[c] * inv_fp - coef * fb[c * sp + v]);
                               }
                           }
                           if (gp) {
                               float coef = pn > kEps2 ? cosv / (pnorm * pnorm) : 0.0f;
                               for (std::size_t c = 0; c < channels; ++c) {
                                   gp[c] += gv * (fb[c * sp + v] * inv_fp - coef * pp_[c]);
                               }
                           }
                       }
                   }
               });
    }
    return Tensor::wrap(out);
}

std::pair<Tensor, int> masked_class_mean(const Tensor& features, const Tensor& mask, float target) {
    check_defined(features, "masked_class_mean");
    check_defined(mask, "masked_class_mean");
    if (features.ndim() != 5) {
        throw ShapeError("masked_class_mean: features must be [K,C,D,H,W], got " +
                         shape_str(features.shape()));
    }
    if (mask.ndim() != 4 || mask.dim(0) != features.dim(0) || mask.dim(1) != features.dim(2) ||
        mask.dim(2) != features.dim(3) || mask.dim(3) != features.dim(4)) {
        throw ShapeError("masked_class_mean: mask " + shape_str(mask.shape()) +
                         " vs features " + shape_str(features.shape()));
    }
    const std::size_t batch = static_cast<std::size_t>(features.dim(0));
    const std::size_t channels = static_cast<std::size_t>(features.dim(1));
    const std::size_t sp = features.numel() / (batch * channels);

    const float* pf = features.data().data();
    const float* pm = mask.data().data();

    std::vector<float> acc(channels, 0.0f);
    std::vector<std::size_t> counts(batch, 0);
    int contributing = 0;
    for (std::size_t k = 0; k < batch; ++k) {
        const float* mb = pm + k * sp;
        std::size_t count = 0;
        for (std::size_t v = 0; v < sp; ++v) {
            if (mb[v] == target) ++count;
        }
        counts[k] = count;
        if (count == 0) continue;
        ++contributing;
        const float inv = 1.0f / static_cast<float>(count);
        const float* fb = pf + k * channels * sp;
        for (std::size_t c = 0; c < channels; ++c) {
            float s = 0.0f;
            const float* row = fb + c * sp;
            for (std::size_t v = 0; v < sp; ++v) {
                if (mb[v] == target) s += row[v];
            }
            acc[c] += s * inv;
        }
    }

    auto out = alloc({static_cast<int>(channels)});
    if (contributing == 0) {
        std::fill(out->data.begin(), out->data.end(), 0.0f);
        return {Tensor::wrap(out), 0};  // degenerate: constant zero prototype
    }
    const float inv_s = 1.0f / static_cast<float>(contributing);
    for (std::size_t c = 0; c < channels; ++c) out->data[c] = acc[c] * inv_s;

    if (tracked(features)) {
        attach(out, {features.node_ptr(), mask.node_ptr()},
               [batch, channels, sp, target, counts, inv_s](Node& self) {
                   Node& fnode = *self.parents[0];
                   if (!fnode.requires_grad) return;
                   const Node& mnode = *self.parents[1];
                   float* gf = ensure_grad(fnode).data();
                   const float* g = self.grad.data();
                   const float* pm_ = mnode.data.data();
                   for (std::size_t k = 0; k < batch; ++k) {
                       if (counts[k] == 0) continue;
                       const float w = inv_s / static_cast<float>(counts[k]);
                       const float* mb = pm_ + k * sp;
                       float* fb = gf + k * channels * sp;
                       for (std::size_t c = 0; c < channels; ++c) {
                           float gc = g[c] * w;
                           if (gc == 0.0f) continue;
                           float* row = fb + c * sp;
                           for (std::size_t v = 0; v < sp; ++v) {
                               if (mb[v] == target) row[v] += gc;
                           }
                       }
                   }
               });
    }
    return {Tensor::wrap(out), contributing};
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

Tensor rand_uniform(std::vector<int> shape, float lo, float hi, Rng& rng, bool requires_grad) {
    std::size_t count = shape_numel(shape);
    std::vector<float> data(count);
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor rand_normal(std::vector<int> shape, float mean, float sigma, Rng& rng, bool requires_grad) {
    std::size_t count = shape_numel(shape);
    std::vector<float> data(count);
    for (auto& v : data) v = rng.normal(mean, sigma);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace cpcl
