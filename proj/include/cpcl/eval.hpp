#pragma once

#include <string>
#include <vector>

#include "cpcl/data.hpp"
#include "cpcl/unet.hpp"

namespace cpcl {

// Covers the volume with patch-sized windows at the given stride, the final
// window per axis clamped to the boundary, and averages the softmax outputs
// of every window covering a voxel. volume is [D,H,W]; the result is
// [2,D,H,W] with channel sums 1.
Tensor sliding_window_infer(const UNet& net, const ParamMap& params, const Tensor& volume,
                            int patch, int stride);

struct OverlapResult {
    double dice = 0.0;
    double jaccard = 0.0;
};

// Both masks empty counts as perfect agreement: (1, 1).
OverlapResult overlap_metrics(const Tensor& pred, const Tensor& gt);

struct SurfaceResult {
    double hd95 = 0.0;
    double asd = 0.0;
    bool undefined = false;  // a side had no surface; values hold the sentinel
};

// Boundary voxels are foreground voxels with a six-connected background or
// out-of-volume neighbor. Directed nearest-boundary distances of both
// directions are pooled; ASD is their mean, HD95 the 95th percentile with
// linear interpolation. An empty mask on either side yields the volume
// diagonal as a sentinel, flagged undefined.
SurfaceResult surface_metrics(const Tensor& pred, const Tensor& gt);

struct CaseMetrics {
    std::string id;
    double dice = 0.0;
    double jaccard = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
    bool surface_undefined = false;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // sample std, n-1 denominator
};

struct MetricsReport {
    std::vector<CaseMetrics> cases;
    MetricSummary dice, jaccard, hd95, asd;
};

// Infers every case with hard_mask(sliding window probs) and scores it
// against its label. All cases must be labeled. If dump_dir is nonempty the
// probability map of each case is written there as a volume file with the
// hard mask in the label slot.
MetricsReport evaluate_cases(const UNet& net, const ParamMap& params,
                             const std::vector<const VolumeSample*>& cases, int patch, int stride,
                             const std::string& dump_dir = "");

// Mean foreground Dice over the given cases; the cheap in-training signal.
double mean_dice(const UNet& net, const ParamMap& params,
                 const std::vector<const VolumeSample*>& cases, int patch, int stride);

}  // namespace cpcl
