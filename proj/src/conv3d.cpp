#include "cpcl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

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

// Inclusive output-index range for which in = out*stride - pad + k stays in
// bounds. Empty when lo > hi.
struct TapRange {
    int lo, hi;
};

TapRange tap_range(int k, int pad, int stride, int in_dim, int out_dim) {
    int lo = 0;
    int num = pad - k;
    if (num > 0) lo = (num + stride - 1) / stride;
    int hi_num = in_dim - 1 + pad - k;
    int hi = hi_num < 0 ? -1 : hi_num / stride;
    if (hi > out_dim - 1) hi = out_dim - 1;
    return {lo, hi};
}

// Dot product with a compile-time-fixed blocked accumulation order: 16
// round-robin lanes, scalar tail, pairwise combine. Order depends only on n,
// so results are bitwise reproducible.
float dot_blocked(const float* a, const float* b, std::size_t n) {
    float acc[16] = {};
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        for (int j = 0; j < 16; ++j) acc[j] += a[i + j] * b[i + j];
    }
    for (int j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
    for (int w = 8; w >= 1; w /= 2) {
        for (int j = 0; j < w; ++j) acc[j] += acc[j + w];
    }
    return acc[0];
}

float dot_strided(const float* a, const float* b, std::size_t n, std::size_t bstride) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i * bstride];
    return acc;
}

float sum_blocked(const float* a, std::size_t n) {
    float acc[16] = {};
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        for (int j = 0; j < 16; ++j) acc[j] += a[i + j];
    }
    for (int j = 0; i < n; ++i, ++j) acc[j] += a[i];
    for (int w = 8; w >= 1; w /= 2) {
        for (int j = 0; j < w; ++j) acc[j] += acc[j + w];
    }
    return acc[0];
}

struct ConvDims {
    int N, Cin, D, H, W;
    int Cout, kd, kh, kw;
    int Do, Ho, Wo;
    std::array<int, 3> stride, pad;
};

// One, two or four destination rows accumulate a shared source row. Restrict
// parameters let the loops vectorize without runtime alias checks; each
// destination keeps its own accumulation chain.
void axpy1(float* __restrict o0, const float* __restrict a, const float* w, int n) {
    const float w0 = w[0];
    for (int x = 0; x < n; ++x) o0[x] += w0 * a[x];
}

void axpy2(float* __restrict o0, float* __restrict o1, const float* __restrict a, const float* w,
           int n) {
    const float w0 = w[0], w1 = w[1];
    for (int x = 0; x < n; ++x) {
        const float v = a[x];
        o0[x] += w0 * v;
        o1[x] += w1 * v;
    }
}

void axpy4(float* __restrict o0, float* __restrict o1, float* __restrict o2, float* __restrict o3,
           const float* __restrict a, const float* w, int n) {
    const float w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3];
    for (int x = 0; x < n; ++x) {
        const float v = a[x];
        o0[x] += w0 * v;
        o1[x] += w1 * v;
        o2[x] += w2 * v;
        o3[x] += w3 * v;
    }
}

// Accumulates CB consecutive output channels of one batch entry. Blocking
// output channels shares every input-row read and the tap bookkeeping across
// CB FMA streams. Each output element still receives its taps in
// (ci, kz, ky, kx) order, so the result is bitwise independent of CB.
template <int CB>
void conv_forward_block(const float* ib, const float* kc0, float* ob, const ConvDims& cd,
                        const TapRange* rxs, std::size_t in_plane, std::size_t out_plane,
                        int ktaps) {
    const std::size_t kco = static_cast<std::size_t>(cd.Cin) * ktaps;
    for (int zo = 0; zo < cd.Do; ++zo) {
        for (int yo = 0; yo < cd.Ho; ++yo) {
            const std::size_t ro = (static_cast<std::size_t>(zo) * cd.Ho + yo) * cd.Wo;
            for (int ci = 0; ci < cd.Cin; ++ci) {
                const float* ip = ib + static_cast<std::size_t>(ci) * in_plane;
                const float* kp = kc0 + static_cast<std::size_t>(ci) * ktaps;
                for (int kz = 0; kz < cd.kd; ++kz) {
                    const int zi = zo * cd.stride[0] - cd.pad[0] + kz;
                    if (zi < 0 || zi >= cd.D) continue;
                    for (int ky = 0; ky < cd.kh; ++ky) {
                        const int yi = yo * cd.stride[1] - cd.pad[1] + ky;
                        if (yi < 0 || yi >= cd.H) continue;
                        const float* irow = ip + (static_cast<std::size_t>(zi) * cd.H + yi) * cd.W;
                        const int koff = (kz * cd.kh + ky) * cd.kw;
                        for (int kx = 0; kx < cd.kw; ++kx) {
                            const TapRange rx = rxs[kx];
                            if (rx.lo > rx.hi) continue;
                            const int len = rx.hi - rx.lo + 1;
                            const float* ir = irow + rx.lo * cd.stride[2] - cd.pad[2] + kx;
                            float w[CB];
                            for (int c = 0; c < CB; ++c) {
                                w[c] = kp[static_cast<std::size_t>(c) * kco + koff + kx];
                            }
                            float* o = ob + ro + rx.lo;
                            if (cd.stride[2] == 1) {
                                if constexpr (CB == 4) {
                                    axpy4(o, o + out_plane, o + 2 * out_plane, o + 3 * out_plane,
                                          ir, w, len);
                                } else if constexpr (CB == 2) {
                                    axpy2(o, o + out_plane, ir, w, len);
                                } else {
                                    axpy1(o, ir, w, len);
                                }
                            } else {
                                for (int c = 0; c < CB; ++c) {
                                    float* oc = o + static_cast<std::size_t>(c) * out_plane;
                                    for (int x = 0; x < len; ++x) oc[x] += w[c] * ir[x * cd.stride[2]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv_forward(const float* in, const float* ker, const float* bias, float* out,
                  const ConvDims& cd) {
    const std::size_t in_plane = static_cast<std::size_t>(cd.D) * cd.H * cd.W;
    const std::size_t out_plane = static_cast<std::size_t>(cd.Do) * cd.Ho * cd.Wo;
    const int ktaps = cd.kd * cd.kh * cd.kw;
    std::vector<TapRange> rxs(static_cast<std::size_t>(cd.kw));
    for (int kx = 0; kx < cd.kw; ++kx) {
        rxs[static_cast<std::size_t>(kx)] = tap_range(kx, cd.pad[2], cd.stride[2], cd.W, cd.Wo);
    }
    for (int n = 0; n < cd.N; ++n) {
        const float* ib = in + static_cast<std::size_t>(n) * cd.Cin * in_plane;
        float* op = out + static_cast<std::size_t>(n) * cd.Cout * out_plane;
        for (int co = 0; co < cd.Cout; ++co) {
            float* p = op + static_cast<std::size_t>(co) * out_plane;
            std::fill(p, p + out_plane, bias[co]);
        }
        int co = 0;
        for (; co + 4 <= cd.Cout; co += 4) {
            conv_forward_block<4>(ib, ker + static_cast<std::size_t>(co) * cd.Cin * ktaps,
                                  op + static_cast<std::size_t>(co) * out_plane, cd, rxs.data(),
                                  in_plane, out_plane, ktaps);
        }
        for (; co + 2 <= cd.Cout; co += 2) {
            conv_forward_block<2>(ib, ker + static_cast<std::size_t>(co) * cd.Cin * ktaps,
                                  op + static_cast<std::size_t>(co) * out_plane, cd, rxs.data(),
                                  in_plane, out_plane, ktaps);
        }
        for (; co < cd.Cout; ++co) {
            conv_forward_block<1>(ib, ker + static_cast<std::size_t>(co) * cd.Cin * ktaps,
                                  op + static_cast<std::size_t>(co) * out_plane, cd, rxs.data(),
                                  in_plane, out_plane, ktaps);
        }
    }
}

void conv_backward_input(const float* gout, const float* ker, float* gin, const ConvDims& cd) {
    const std::size_t in_plane = static_cast<std::size_t>(cd.D) * cd.H * cd.W;
    const std::size_t out_plane = static_cast<std::size_t>(cd.Do) * cd.Ho * cd.Wo;
    const int ktaps = cd.kd * cd.kh * cd.kw;
    if (cd.stride[0] == 1 && cd.stride[1] == 1 && cd.stride[2] == 1) {
        // Row-major over input-gradient rows with CB input channels sharing
        // each output-gradient row read. Every element still receives its
        // contributions in (co, kz, ky, kx) order, bitwise matching the
        // generic sweep below.
        auto block = [&]<int CB>(int n, int ci0) {
            float* gp = gin + (static_cast<std::size_t>(n) * cd.Cin + ci0) * in_plane;
            for (int zi = 0; zi < cd.D; ++zi) {
                for (int yi = 0; yi < cd.H; ++yi) {
                    const std::size_t ri = (static_cast<std::size_t>(zi) * cd.H + yi) * cd.W;
                    for (int co = 0; co < cd.Cout; ++co) {
                        const float* op =
                            gout + (static_cast<std::size_t>(n) * cd.Cout + co) * out_plane;
                        const float* kp =
                            ker + (static_cast<std::size_t>(co) * cd.Cin + ci0) * ktaps;
                        for (int kz = 0; kz < cd.kd; ++kz) {
                            const int zo = zi + cd.pad[0] - kz;
                            if (zo < 0 || zo >= cd.Do) continue;
                            for (int ky = 0; ky < cd.kh; ++ky) {
                                const int yo = yi + cd.pad[1] - ky;
                                if (yo < 0 || yo >= cd.Ho) continue;
                                const float* obase =
                                    op + (static_cast<std::size_t>(zo) * cd.Ho + yo) * cd.Wo;
                                const int koff = (kz * cd.kh + ky) * cd.kw;
                                for (int kx = 0; kx < cd.kw; ++kx) {
                                    int xi_lo = kx - cd.pad[2];
                                    if (xi_lo < 0) xi_lo = 0;
                                    int xi_hi = cd.Wo - 1 + kx - cd.pad[2];
                                    if (xi_hi > cd.W - 1) xi_hi = cd.W - 1;
                                    if (xi_lo > xi_hi) continue;
                                    const int len = xi_hi - xi_lo + 1;
                                    const float* orow = obase + xi_lo + cd.pad[2] - kx;
                                    float w[CB];
                                    for (int c = 0; c < CB; ++c) {
                                        w[c] = kp[static_cast<std::size_t>(c) * ktaps + koff + kx];
                                    }
                                    float* g = gp + ri + xi_lo;
                                    if constexpr (CB == 4) {
                                        axpy4(g, g + in_plane, g + 2 * in_plane, g + 3 * in_plane,
                                              orow, w, len);
                                    } else if constexpr (CB == 2) {
                                        axpy2(g, g + in_plane, orow, w, len);
                                    } else {
                                        axpy1(g, orow, w, len);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        for (int n = 0; n < cd.N; ++n) {
            int ci = 0;
            for (; ci + 4 <= cd.Cin; ci += 4) block.operator()<4>(n, ci);
            for (; ci + 2 <= cd.Cin; ci += 2) block.operator()<2>(n, ci);
            for (; ci < cd.Cin; ++ci) block.operator()<1>(n, ci);
        }
        return;
    }
    for (int n = 0; n < cd.N; ++n) {
        for (int ci = 0; ci < cd.Cin; ++ci) {
            float* gp = gin + (static_cast<std::size_t>(n) * cd.Cin + ci) * in_plane;
            for (int co = 0; co < cd.Cout; ++co) {
                const float* op = gout + (static_cast<std::size_t>(n) * cd.Cout + co) * out_plane;
                const float* kp = ker + (static_cast<std::size_t>(co) * cd.Cin + ci) * ktaps;
                for (int kz = 0; kz < cd.kd; ++kz) {
                    TapRange rz = tap_range(kz, cd.pad[0], cd.stride[0], cd.D, cd.Do);
                    for (int ky = 0; ky < cd.kh; ++ky) {
                        TapRange ry = tap_range(ky, cd.pad[1], cd.stride[1], cd.H, cd.Ho);
                        for (int kx = 0; kx < cd.kw; ++kx) {
                            TapRange rx = tap_range(kx, cd.pad[2], cd.stride[2], cd.W, cd.Wo);
                            if (rz.lo > rz.hi || ry.lo > ry.hi || rx.lo > rx.hi) continue;
                            const float w = kp[(kz * cd.kh + ky) * cd.kw + kx];
                            const int xi0 = rx.lo * cd.stride[2] - cd.pad[2] + kx;
                            const int len = rx.hi - rx.lo + 1;
                            for (int zo = rz.lo; zo <= rz.hi; ++zo) {
                                const int zi = zo * cd.stride[0] - cd.pad[0] + kz;
                                for (int yo = ry.lo; yo <= ry.hi; ++yo) {
                                    const int yi = yo * cd.stride[1] - cd.pad[1] + ky;
                                    float* gr =
                                        gp + (static_cast<std::size_t>(zi) * cd.H + yi) * cd.W + xi0;
                                    const float* orow =
                                        op + (static_cast<std::size_t>(zo) * cd.Ho + yo) * cd.Wo + rx.lo;
                                    if (cd.stride[2] == 1) {
                                        for (int x = 0; x < len; ++x) gr[x] += w * orow[x];
                                    } else {
                                        for (int x = 0; x < len; ++x) gr[x * cd.stride[2]] += w * orow[x];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv_backward_kernel(const float* in, const float* gout, float* gker, const ConvDims& cd) {
    const std::size_t in_plane = static_cast<std::size_t>(cd.D) * cd.H * cd.W;
    const std::size_t out_plane = static_cast<std::size_t>(cd.Do) * cd.Ho * cd.Wo;
    const int ktaps = cd.kd * cd.kh * cd.kw;
    if (cd.stride[0] == 1 && cd.stride[1] == 1 && cd.stride[2] == 1) {
        // Each tap keeps 16 accumulation lanes across all rows and batch
        // entries, reduced pairwise once at the end. CB output channels share
        // every input-row read. The lane assignment depends only on the
        // shapes, so results stay bitwise reproducible.
        auto block = [&]<int CB>(int co0) {
            for (int ci = 0; ci < cd.Cin; ++ci) {
                for (int kz = 0; kz < cd.kd; ++kz) {
                    TapRange rz = tap_range(kz, cd.pad[0], 1, cd.D, cd.Do);
                    for (int ky = 0; ky < cd.kh; ++ky) {
                        TapRange ry = tap_range(ky, cd.pad[1], 1, cd.H, cd.Ho);
                        for (int kx = 0; kx < cd.kw; ++kx) {
                            TapRange rx = tap_range(kx, cd.pad[2], 1, cd.W, cd.Wo);
                            if (rz.lo > rz.hi || ry.lo > ry.hi || rx.lo > rx.hi) continue;
                            const int xi0 = rx.lo - cd.pad[2] + kx;
                            const std::size_t len = static_cast<std::size_t>(rx.hi - rx.lo + 1);
                            float lanes[CB][16] = {};
                            for (int n = 0; n < cd.N; ++n) {
                                const float* ip =
                                    in + (static_cast<std::size_t>(n) * cd.Cin + ci) * in_plane;
                                const float* ob =
                                    gout + (static_cast<std::size_t>(n) * cd.Cout + co0) * out_plane;
                                for (int zo = rz.lo; zo <= rz.hi; ++zo) {
                                    const int zi = zo - cd.pad[0] + kz;
                                    for (int yo = ry.lo; yo <= ry.hi; ++yo) {
                                        const int yi = yo - cd.pad[1] + ky;
                                        const std::size_t ro =
                                            (static_cast<std::size_t>(zo) * cd.Ho + yo) * cd.Wo +
                                            rx.lo;
                                        const float* __restrict ir =
                                            ip + (static_cast<std::size_t>(zi) * cd.H + yi) * cd.W +
                                            xi0;
                                        std::size_t i = 0;
                                        for (; i + 16 <= len; i += 16) {
                                            for (int c = 0; c < CB; ++c) {
                                                const float* orow =
                                                    ob + static_cast<std::size_t>(c) * out_plane + ro;
                                                for (int j = 0; j < 16; ++j) {
                                                    lanes[c][j] += orow[i + j] * ir[i + j];
                                                }
                                            }
                                        }
                                        if (i + 8 <= len) {
                                            for (int c = 0; c < CB; ++c) {
                                                const float* orow =
                                                    ob + static_cast<std::size_t>(c) * out_plane + ro;
                                                for (int j = 0; j < 8; ++j) {
                                                    lanes[c][j] += orow[i + j] * ir[i + j];
                                                }
                                            }
                                            i += 8;
                                        }
                                        for (int j = 0; i < len; ++i, ++j) {
                                            for (int c = 0; c < CB; ++c) {
                                                const float* orow =
                                                    ob + static_cast<std::size_t>(c) * out_plane + ro;
                                                lanes[c][j] += orow[i] * ir[i];
                                            }
                                        }
                                    }
                                }
                            }
                            for (int c = 0; c < CB; ++c) {
                                for (int w = 8; w >= 1; w /= 2) {
                                    for (int j = 0; j < w; ++j) lanes[c][j] += lanes[c][j + w];
                                }
                                float* kp = gker +
                                            (static_cast<std::size_t>(co0 + c) * cd.Cin + ci) * ktaps;
                                kp[(kz * cd.kh + ky) * cd.kw + kx] += lanes[c][0];
                            }
                        }
                    }
                }
            }
        };
        int co = 0;
        for (; co + 4 <= cd.Cout; co += 4) block.operator()<4>(co);
        for (; co + 2 <= cd.Cout; co += 2) block.operator()<2>(co);
        for (; co < cd.Cout; ++co) block.operator()<1>(co);
        return;
    }
    std::vector<float> acc(static_cast<std::size_t>(ktaps));
    for (int co = 0; co < cd.Cout; ++co) {
        for (int ci = 0; ci < cd.Cin; ++ci) {
            std::fill(acc.begin(), acc.end(), 0.0f);
            for (int n = 0; n < cd.N; ++n) {
                const float* ip = in + (static_cast<std::size_t>(n) * cd.Cin + ci) * in_plane;
                const float* op = gout + (static_cast<std::size_t>(n) * cd.Cout + co) * out_plane;
                for (int kz = 0; kz < cd.kd; ++kz) {
                    TapRange rz = tap_range(kz, cd.pad[0], cd.stride[0], cd.D, cd.Do);
                    for (int ky = 0; ky < cd.kh; ++ky) {
                        TapRange ry = tap_range(ky, cd.pad[1], cd.stride[1], cd.H, cd.Ho);
                        for (int kx = 0; kx < cd.kw; ++kx) {
                            TapRange rx = tap_range(kx, cd.pad[2], cd.stride[2], cd.W, cd.Wo);
                            if (rz.lo > rz.hi || ry.lo > ry.hi || rx.lo > rx.hi) continue;
                            float* a = &acc[static_cast<std::size_t>((kz * cd.kh + ky) * cd.kw + kx)];
                            const int xi0 = rx.lo * cd.stride[2] - cd.pad[2] + kx;
                            const int len = rx.hi - rx.lo + 1;
                            for (int zo = rz.lo; zo <= rz.hi; ++zo) {
                                const int zi = zo * cd.stride[0] - cd.pad[0] + kz;
                                for (int yo = ry.lo; yo <= ry.hi; ++yo) {
                                    const int yi = yo * cd.stride[1] - cd.pad[1] + ky;
                                    const float* ir =
                                        ip + (static_cast<std::size_t>(zi) * cd.H + yi) * cd.W + xi0;
                                    const float* orow =
                                        op + (static_cast<std::size_t>(zo) * cd.Ho + yo) * cd.Wo + rx.lo;
                                    if (cd.stride[2] == 1) {
                                        *a += dot_blocked(orow, ir, static_cast<std::size_t>(len));
                                    } else {
                                        *a += dot_strided(orow, ir, static_cast<std::size_t>(len),
                                                          static_cast<std::size_t>(cd.stride[2]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            float* kp = gker + (static_cast<std::size_t>(co) * cd.Cin + ci) * ktaps;
            for (int t = 0; t < ktaps; ++t) kp[t] += acc[static_cast<std::size_t>(t)];
        }
    }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<int, 3> stride, std::array<int, 3> padding) {
    if (!input.defined() || !kernel.defined() || !bias.defined()) {
        throw ValueError("conv3d: undefined tensor");
    }
    if (input.ndim() != 5) throw ShapeError("conv3d: input must be [N,Cin,D,H,W], got " + shape_str(input.shape()));
    if (kernel.ndim() != 5) throw ShapeError("conv3d: kernel must be [Cout,Cin,kd,kh,kw], got " + shape_str(kernel.shape()));
    if (bias.ndim() != 1 || bias.dim(0) != kernel.dim(0)) {
        throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " vs kernel " + shape_str(kernel.shape()));
    }
    if (kernel.dim(1) != input.dim(1)) {
        throw ShapeError("conv3d: input channels " + std::to_string(input.dim(1)) +
                         " vs kernel channels " + std::to_string(kernel.dim(1)));
    }
    for (int i = 0; i < 3; ++i) {
        if (stride[static_cast<std::size_t>(i)] < 1) throw ValueError("conv3d: stride must be >= 1");
        if (padding[static_cast<std::size_t>(i)] < 0) throw ValueError("conv3d: negative padding");
    }

    ConvDims cd;
    cd.N = input.dim(0);
    cd.Cin = input.dim(1);
    cd.D = input.dim(2);
    cd.H = input.dim(3);
    cd.W = input.dim(4);
    cd.Cout = kernel.dim(0);
    cd.kd = kernel.dim(2);
    cd.kh = kernel.dim(3);
    cd.kw = kernel.dim(4);
    cd.stride = stride;
    cd.pad = padding;
    const int in_dims[3] = {cd.D, cd.H, cd.W};
    const int k_dims[3] = {cd.kd, cd.kh, cd.kw};
    int out_dims[3];
    for (int i = 0; i < 3; ++i) {
        int span = in_dims[i] + 2 * padding[static_cast<std::size_t>(i)] - k_dims[i];
        if (span < 0) {
            throw ShapeError("conv3d: kernel " + shape_str(kernel.shape()) +
                             " larger than padded input " + shape_str(input.shape()));
        }
        out_dims[i] = span / stride[static_cast<std::size_t>(i)] + 1;
    }
    cd.Do = out_dims[0];
    cd.Ho = out_dims[1];
    cd.Wo = out_dims[2];

    auto out = alloc({cd.N, cd.Cout, cd.Do, cd.Ho, cd.Wo});
    conv_forward(input.data().data(), kernel.data().data(), bias.data().data(),
                 out->data.data(), cd);

    if (tracked(input) || tracked(kernel) || tracked(bias)) {
        attach(out, {input.node_ptr(), kernel.node_ptr(), bias.node_ptr()}, [cd](Node& self) {
            Node& in_node = *self.parents[0];
            Node& ker_node = *self.parents[1];
            Node& bias_node = *self.parents[2];
            const float* g = self.grad.data();
            if (in_node.requires_grad) {
                conv_backward_input(g, ker_node.data.data(), ensure_grad(in_node).data(), cd);
            }
            if (ker_node.requires_grad) {
                conv_backward_kernel(in_node.data.data(), g, ensure_grad(ker_node).data(), cd);
            }
            if (bias_node.requires_grad) {
                float* gb = ensure_grad(bias_node).data();
                const std::size_t out_plane = static_cast<std::size_t>(cd.Do) * cd.Ho * cd.Wo;
                for (int co = 0; co < cd.Cout; ++co) {
                    for (int n = 0; n < cd.N; ++n) {
                        gb[co] += sum_blocked(
                            g + (static_cast<std::size_t>(n) * cd.Cout + co) * out_plane, out_plane);
                    }
                }
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
    return conv3d(input, kernel, bias, {stride, stride, stride}, {padding, padding, padding});
}

Tensor max_pool3d2(const Tensor& a) {
    if (!a.defined()) throw ValueError("max_pool3d2: undefined tensor");
    if (a.ndim() != 5) throw ShapeError("max_pool3d2: need [N,C,D,H,W], got " + shape_str(a.shape()));
    const int N = a.dim(0), C = a.dim(1), D = a.dim(2), H = a.dim(3), W = a.dim(4);
    if (D % 2 || H % 2 || W % 2) {
        throw ShapeError("max_pool3d2: spatial dims must be even, got " + shape_str(a.shape()));
    }
    const int Do = D / 2, Ho = H / 2, Wo = W / 2;
    auto out = alloc({N, C, Do, Ho, Wo});

    const float* pa = a.data().data();
    float* po = out->data.data();
    std::vector<std::size_t> argmax(out->numel());
    std::size_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * D * H * W;
        for (int zo = 0; zo < Do; ++zo) {
            for (int yo = 0; yo < Ho; ++yo) {
                for (int xo = 0; xo < Wo; ++xo, ++o) {
                    // First max in (dz,dy,dx) scan order wins ties.
                    std::size_t best_i = 0;
                    float best = -std::numeric_limits<float>::infinity();
                    for (int dz = 0; dz < 2; ++dz) {
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                std::size_t i = base +
                                    (static_cast<std::size_t>(2 * zo + dz) * H + (2 * yo + dy)) * W +
                                    (2 * xo + dx);
                                if (pa[i] > best) {
                                    best = pa[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    po[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [argmax = std::move(argmax)](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            std::size_t count = self.numel();
            for (std::size_t i = 0; i < count; ++i) gp[argmax[i]] += g[i];
        });
    }
    return Tensor::wrap(out);
}

Tensor upsample_nearest2(const Tensor& a) {
    if (!a.defined()) throw ValueError("upsample_nearest2: undefined tensor");
    if (a.ndim() != 5) throw ShapeError("upsample_nearest2: need [N,C,D,H,W], got " + shape_str(a.shape()));
    const int N = a.dim(0), C = a.dim(1), D = a.dim(2), H = a.dim(3), W = a.dim(4);
    auto out = alloc({N, C, 2 * D, 2 * H, 2 * W});

    const float* pa = a.data().data();
    float* po = out->data.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const float* ip = pa + static_cast<std::size_t>(nc) * D * H * W;
        float* op = po + static_cast<std::size_t>(nc) * 8 * D * H * W;
        for (int z = 0; z < 2 * D; ++z) {
            for (int y = 0; y < 2 * H; ++y) {
                const float* ir = ip + (static_cast<std::size_t>(z / 2) * H + y / 2) * W;
                float* orow = op + (static_cast<std::size_t>(z) * 2 * H + y) * 2 * W;
                for (int x = 0; x < W; ++x) {
                    orow[2 * x] = ir[x];
                    orow[2 * x + 1] = ir[x];
                }
            }
        }
    }
    if (tracked(a)) {
        attach(out, {a.node_ptr()}, [N, C, D, H, W](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            float* gp = ensure_grad(p).data();
            const float* g = self.grad.data();
            for (int nc = 0; nc < N * C; ++nc) {
                float* gin = gp + static_cast<std::size_t>(nc) * D * H * W;
                const float* go = g + static_cast<std::size_t>(nc) * 8 * D * H * W;
                for (int z = 0; z < D; ++z) {
                    for (int y = 0; y < H; ++y) {
                        for (int x = 0; x < W; ++x) {
                            float s = 0.0f;
                            for (int dz = 0; dz < 2; ++dz) {
                                for (int dy = 0; dy < 2; ++dy) {
                                    const float* row =
                                        go + (static_cast<std::size_t>(2 * z + dz) * 2 * H + (2 * y + dy)) * 2 * W +
                                        2 * x;
                                    s += row[0];
                                    s += row[1];
                                }
                            }
                            gin[(static_cast<std::size_t>(z) * H + y) * W + x] += s;
                        }
                    }
                }
            }
        });
    }
    return Tensor::wrap(out);
}

namespace {

// Per-axis sample positions under the half-pixel convention, clamped.
struct AxisMap {
    std::vector<int> i0, i1;
    std::vector<float> frac;
};

AxisMap axis_map(int in_dim, int out_dim) {
    AxisMap m;
    m.i0.resize(static_cast<std::size_t>(out_dim));
    m.i1.resize(static_cast<std::size_t>(out_dim));
    m.frac.resize(static_cast<std::size_t>(out_dim));
    const float ratio = static_cast<float>(in_dim) / static_cast<float>(out_dim);
    for (int t = 0; t < out_dim; ++t) {
        float s = (static_cast<float>(t) + 0.5f) * ratio - 0.5f;
        if (s < 0.0f) s = 0.0f;
        const float max_s = static_cast<float>(in_dim - 1);
        if (s > max_s) s = max_s;
        int i0 = static_cast<int>(s);
        if (i0 > in_dim - 1) i0 = in_dim - 1;
        m.i0[static_cast<std::size_t>(t)] = i0;
        m.i1[static_cast<std::size_t>(t)] = std::min(i0 + 1, in_dim - 1);
        m.frac[static_cast<std::size_t>(t)] = s - static_cast<float>(i0);
    }
    return m;
}

}  // namespace

Tensor trilinear_resize(const Tensor& a, std::array<int, 3> out_dims) {
    if (!a.defined()) throw ValueError("trilinear_resize: undefined tensor");
    if (a.ndim() != 5) throw ShapeError("trilinear_resize: need [N,C,D,H,W], got " + shape_str(a.shape()));
    for (int d : out_dims) {
        if (d < 1) throw ShapeError("trilinear_resize: output dims must be >= 1");
    }
    const int N = a.dim(0), C = a.dim(1), D = a.dim(2), H = a.dim(3), W = a.dim(4);
    const int Do = out_dims[0], Ho = out_dims[1], Wo = out_dims[2];
    auto out = alloc({N, C, Do, Ho, Wo});

    AxisMap mz = axis_map(D, Do), my = axis_map(H, Ho), mx = axis_map(W, Wo);
    const float* pa = a.data().data();
    float* po = out->data.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const float* ip = pa + static_cast<std::size_t>(nc) * D * H * W;
        float* op = po + static_cast<std::size_t>(nc) * Do * Ho * Wo;
        for (int z = 0; z < Do; ++z) {
            const std::size_t z0 = static_cast<std::size_t>(mz.i0[static_cast<std::size_t>(z)]) * H;
            const std::size_t z1 = static_cast<std::size_t>(mz.i1[static_cast<std::size_t>(z)]) * H;
            const float fz = mz.frac[static_cast<std::size_t>(z)];
            for (int y = 0; y < Ho; ++y) {
                const std::size_t y0 = static_cast<std::size_t>(my.i0[static_cast<std::size_t>(y)]);
                const std::size_t y1 = static_cast<std::size_t>(my.i1[static_cast<std::size_t>(y)]);
                const float fy = my.frac[static_cast<std::size_t>(y)];
                const float* r00 = ip + (z0 + y0) * W;
                const float* r01 = ip + (z0 + y1) * W;
                const float* r10 = ip + (z1 + y0) * W;
                const float* r11 = ip + (z1 + y1) * W;
                float* orow = op + (static_cast<std::size_t>(z) * Ho + y) * Wo;
                for (int x = 0; x < Wo; ++x) {
                    const int x0 = mx.i0[static_cast<std::size_t>(x)];
                    const int x1 = mx.i1[static_cast<std::size_t>(x)];
                    const float fx = mx.frac[static_cast<std::size_t>(x)];
                    const float wz0 = 1.0f - fz, wy0 = 1.0f - fy, wx0 = 1.0f - fx;
                    float v = wz0 * wy0 * wx0 * r00[x0];
                    v += wz0 * wy0 * fx * r00[x1];
                    v += wz0 * fy * wx0 * r01[x0];
                    v += wz0 * fy * fx * r01[x1];
                    v += fz * wy0 * wx0 * r10[x0];
                    v += fz * wy0 * fx * r10[x1];
                    v += fz * fy * wx0 * r11[x0];
                    v += fz * fy * fx * r11[x1];
                    orow[x] = v;
                }
            }
        }
    }
    if (tracked(a)) {
        attach(out, {a.node_ptr()},
               [N, C, D, H, W, Do, Ho, Wo, mz = std::move(mz), my = std::move(my),
                mx = std::move(mx)](Node& self) {
                   Node& p = *self.parents[0];
                   if (!p.requires_grad) return;
                   float* gp = ensure_grad(p).data();
                   const float* g = self.grad.data();
                   for (int nc = 0; nc < N * C; ++nc) {
                       float* gin = gp + static_cast<std::size_t>(nc) * D * H * W;
                       const float* go = g + static_cast<std::size_t>(nc) * Do * Ho * Wo;
                       for (int z = 0; z < Do; ++z) {
                           const std::size_t z0 = static_cast<std::size_t>(mz.i0[static_cast<std::size_t>(z)]) * H;
                           const std::size_t z1 = static_cast<std::size_t>(mz.i1[static_cast<std::size_t>(z)]) * H;
                           const float fz = mz.frac[static_cast<std::size_t>(z)];
                           for (int y = 0; y < Ho; ++y) {
                               const std::size_t y0 = static_cast<std::size_t>(my.i0[static_cast<std::size_t>(y)]);
                               const std::size_t y1 = static_cast<std::size_t>(my.i1[static_cast<std::size_t>(y)]);
                               const float fy = my.frac[static_cast<std::size_t>(y)];
                               float* r00 = gin + (z0 + y0) * W;
                               float* r01 = gin + (z0 + y1) * W;
                               float* r10 = gin + (z1 + y0) * W;
                               float* r11 = gin + (z1 + y1) * W;
                               const float* grow = go + (static_cast<std::size_t>(z) * Ho + y) * Wo;
                               for (int x = 0; x < Wo; ++x) {
                                   const float gv = grow[x];
                                   if (gv == 0.0f) continue;
                                   const int x0 = mx.i0[static_cast<std::size_t>(x)];
                                   const int x1 = mx.i1[static_cast<std::size_t>(x)];
                                   const float fx = mx.frac[static_cast<std::size_t>(x)];
                                   const float wz0 = 1.0f - fz, wy0 = 1.0f - fy, wx0 = 1.0f - fx;
                                   r00[x0] += gv * wz0 * wy0 * wx0;
                                   r00[x1] += gv * wz0 * wy0 * fx;
                                   r01[x0] += gv * wz0 * fy * wx0;
                                   r01[x1] += gv * wz0 * fy * fx;
                                   r10[x0] += gv * fz * wy0 * wx0;
                                   r10[x1] += gv * fz * wy0 * fx;
                                   r11[x0] += gv * fz * fy * wx0;
                                   r11[x1] += gv * fz * fy * fx;
                               }
                           }
                       }
                   }
               });
    }
    return Tensor::wrap(out);
}

}  // namespace cpcl
