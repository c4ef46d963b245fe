#include "cpcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "cpcl/ops.hpp"
#include "cpcl/proto.hpp"

namespace cpcl {

namespace {

std::vector<int> window_origins(int extent, int patch, int stride) {
    std::vector<int> origins;
    for (int o = 0; o + patch <= extent; o += stride) origins.push_back(o);
    if (origins.empty() || origins.back() + patch < extent) origins.push_back(extent - patch);
    return origins;
}

struct BoundaryPoint {
    int z, y, x;
};

std::vector<BoundaryPoint> boundary_voxels(const Tensor& mask) {
    const int D = mask.dim(0), H = mask.dim(1), W = mask.dim(2);
    const float* m = mask.data().data();
    auto fg = [&](int z, int y, int x) {
        return m[(static_cast<std::size_t>(z) * H + y) * W + x] != 0.0f;
    };
    std::vector<BoundaryPoint> out;
    for (int z = 0; z < D; ++z) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!fg(z, y, x)) continue;
                const bool edge = z == 0 || z == D - 1 || y == 0 || y == H - 1 || x == 0 ||
                                  x == W - 1;
                if (edge || !fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) ||
                    !fg(z, y + 1, x) || !fg(z, y, x - 1) || !fg(z, y, x + 1)) {
                    out.push_back({z, y, x});
                }
            }
        }
    }
    return out;
}

// Nearest squared distance from p into `to`, pruned by the z-sorted order.
double nearest_sq(const BoundaryPoint& p, const std::vector<BoundaryPoint>& to) {
    double best = std::numeric_limits<double>::max();
    auto lower = std::lower_bound(to.begin(), to.end(), p.z,
                                  [](const BoundaryPoint& b, int z) { return b.z < z; });
    auto probe = [&](const BoundaryPoint& q) {
        const double dz = q.z - p.z, dy = q.y - p.y, dx = q.x - p.x;
        const double d = dz * dz + dy * dy + dx * dx;
        if (d < best) best = d;
    };
    for (auto it = lower; it != to.end(); ++it) {
        const double dz = it->z - p.z;
        if (dz * dz >= best) break;
        probe(*it);
    }
    for (auto it = std::make_reverse_iterator(lower); it != to.rend(); ++it) {
        const double dz = it->z - p.z;
        if (dz * dz >= best) break;
        probe(*it);
    }
    return best;
}

void directed_distances(const std::vector<BoundaryPoint>& from,
                        const std::vector<BoundaryPoint>& to, std::vector<double>& pooled) {
    for (const auto& p : from) pooled.push_back(std::sqrt(nearest_sq(p, to)));
}

double percentile_interpolated(std::vector<double>& values, double q) {
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

void check_mask_pair(const Tensor& pred, const Tensor& gt, const char* who) {
    if (pred.ndim() != 3 || gt.ndim() != 3) throw ShapeError(std::string(who) + ": masks must be [D,H,W]");
    if (pred.shape() != gt.shape()) {
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(pred.shape()) +
                         " vs " + shape_str(gt.shape()));
    }
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

}  // namespace

Tensor sliding_window_infer(const UNet& net, const ParamMap& params, const Tensor& volume,
                            int patch, int stride) {
    if (volume.ndim() != 3) throw ShapeError("sliding_window_infer: volume must be [D,H,W]");
    if (stride < 1) throw ValueError("sliding_window_infer: stride must be >= 1");
    const int D = volume.dim(0), H = volume.dim(1), W = volume.dim(2);
    for (int d : {D, H, W}) {
        if (patch > d) {
            throw ShapeError("sliding_window_infer: patch " + std::to_string(patch) +
                             " exceeds volume " + shape_str(volume.shape()));
        }
    }
    const auto zs = window_origins(D, patch, stride);
    const auto ys = window_origins(H, patch, stride);
    const auto xs = window_origins(W, patch, stride);

    // Inference never needs the graph; detached weights keep each window
    // forward allocation-light.
    ParamMap frozen;
    for (const auto& [name, t] : params) {
        frozen.emplace(name, t.requires_grad() ? t.detach() : t);
    }

    const std::size_t vox = static_cast<std::size_t>(D) * H * W;
    std::vector<float> acc(2 * vox, 0.0f);
    std::vector<float> count(vox, 0.0f);
    std::vector<float> win(static_cast<std::size_t>(patch) * patch * patch);

    const float* vol = volume.data().data();
    for (int oz : zs) {
        for (int oy : ys) {
            for (int ox : xs) {
                std::size_t i = 0;
                for (int z = 0; z < patch; ++z) {
                    for (int y = 0; y < patch; ++y) {
                        const float* row =
                            vol + (static_cast<std::size_t>(oz + z) * H + (oy + y)) * W + ox;
                        for (int x = 0; x < patch; ++x, ++i) win[i] = row[x];
                    }
                }
                Tensor input = Tensor::from_data({1, 1, patch, patch, patch},
                                                 std::vector<float>(win));
                Tensor probs = net.forward(frozen, input).probs;
                const float* p = probs.data().data();
                const std::size_t wvox = win.size();
                for (int z = 0; z < patch; ++z) {
                    for (int y = 0; y < patch; ++y) {
                        const std::size_t dst =
                            (static_cast<std::size_t>(oz + z) * H + (oy + y)) * W + ox;
                        const std::size_t src = (static_cast<std::size_t>(z) * patch + y) * patch;
                        for (int x = 0; x < patch; ++x) {
                            acc[dst + x] += p[src + x];
                            acc[vox + dst + x] += p[wvox + src + x];
                            count[dst + x] += 1.0f;
                        }
                    }
                }
            }
        }
    }
    for (std::size_t v = 0; v < vox; ++v) {
        acc[v] /= count[v];
        acc[vox + v] /= count[v];
    }
    return Tensor::from_data({2, D, H, W}, std::move(acc));
}

OverlapResult overlap_metrics(const Tensor& pred, const Tensor& gt) {
    check_mask_pair(pred, gt, "overlap_metrics");
    const float* a = pred.data().data();
    const float* b = gt.data().data();
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const bool fa = a[i] != 0.0f, fb = b[i] != 0.0f;
        na += fa;
        nb += fb;
        inter += fa && fb;
    }
    if (na + nb == 0) return {1.0, 1.0};
    OverlapResult r;
    r.dice = 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
    const std::size_t uni = na + nb - inter;
    r.jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return r;
}

SurfaceResult surface_metrics(const Tensor& pred, const Tensor& gt) {
    check_mask_pair(pred, gt, "surface_metrics");
    const auto bp = boundary_voxels(pred);
    const auto bg = boundary_voxels(gt);
    SurfaceResult r;
    if (bp.empty() || bg.empty()) {
        const double dz = pred.dim(0), dy = pred.dim(1), dx = pred.dim(2);
        r.hd95 = r.asd = std::sqrt(dz * dz + dy * dy + dx * dx);
        r.undefined = true;
        return r;
    }
    std::vector<double> pooled;
    pooled.reserve(bp.size() + bg.size());
    directed_distances(bp, bg, pooled);
    directed_distances(bg, bp, pooled);
    double sum = 0.0;
    for (double d : pooled) sum += d;
    r.asd = sum / static_cast<double>(pooled.size());
    r.hd95 = percentile_interpolated(pooled, 0.95);
    return r;
}

MetricsReport evaluate_cases(const UNet& net, const ParamMap& params,
                             const std::vector<const VolumeSample*>& cases, int patch, int stride,
                             const std::string& dump_dir) {
    MetricsReport report;
    std::vector<double> dice, jaccard, hd95, asd;
    for (const auto* sample : cases) {
        if (!sample->labeled) {
            throw ValueError("evaluate_cases: sample " + sample->id + " has no label");
        }
        Tensor probs = sliding_window_infer(net, params, sample->image, patch, stride);
        std::vector<int> shape5 = {1, 2, probs.dim(1), probs.dim(2), probs.dim(3)};
        Tensor mask5 = hard_mask(reshape(probs, shape5));
        Tensor mask = reshape(mask5, {probs.dim(1), probs.dim(2), probs.dim(3)});

        CaseMetrics cm;
        cm.id = sample->id;
        const OverlapResult o = overlap_metrics(mask, sample->label);
        const SurfaceResult s = surface_metrics(mask, sample->label);
        cm.dice = o.dice;
        cm.jaccard = o.jaccard;
        cm.hd95 = s.hd95;
        cm.asd = s.asd;
        cm.surface_undefined = s.undefined;
        report.cases.push_back(cm);
        dice.push_back(cm.dice);
        jaccard.push_back(cm.jaccard);
        hd95.push_back(cm.hd95);
        asd.push_back(cm.asd);

        if (!dump_dir.empty()) {
            VolumeSample dump;
            dump.id = sample->id;
            dump.image = reshape(slice_channel(reshape(probs, shape5), 1),
                                 {probs.dim(1), probs.dim(2), probs.dim(3)});
            dump.label = mask;
            dump.labeled = true;
            const auto path = std::filesystem::path(dump_dir) / (sample->id + "_probs.cpv");
            write_volume(dump, path.string());
        }
    }
    report.dice = summarize(dice);
    report.jaccard = summarize(jaccard);
    report.hd95 = summarize(hd95);
    report.asd = summarize(asd);
    return report;
}

double mean_dice(const UNet& net, const ParamMap& params,
                 const std::vector<const VolumeSample*>& cases, int patch, int stride) {
    double acc = 0.0;
    for (const auto* sample : cases) {
        if (!sample->labeled) throw ValueError("mean_dice: sample " + sample->id + " has no label");
        Tensor probs = sliding_window_infer(net, params, sample->image, patch, stride);
        std::vector<int> shape5 = {1, 2, probs.dim(1), probs.dim(2), probs.dim(3)};
        Tensor mask5 = hard_mask(reshape(probs, shape5));
        Tensor mask = reshape(mask5, {probs.dim(1), probs.dim(2), probs.dim(3)});
        acc += overlap_metrics(mask, sample->label).dice;
    }
    return cases.empty() ? 0.0 : acc / static_cast<double>(cases.size());
}

}  // namespace cpcl
