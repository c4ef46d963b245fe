#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpcl/rng.hpp"
#include "cpcl/tensor.hpp"

namespace cpcl {

struct VolumeSample {
    std::string id;
    Tensor image;  // [D,H,W]
    Tensor label;  // [D,H,W] of {0,1}; defined iff labeled
    bool labeled = false;
};

struct DatasetSplit {
    std::vector<std::string> train_labeled;
    std::vector<std::string> train_unlabeled;
    std::vector<std::string> val;
    std::vector<std::string> test;
    float labeled_fraction = 0.0f;
};

// Volumes with 1-3 bright ellipsoids over a smooth low-frequency bias field
// plus voxel noise. Labels mark ellipsoid interiors. The whole dataset is a
// pure function of (seed, count, dims); every label has nonempty foreground
// and background.
std::vector<VolumeSample> generate_synthetic(std::uint64_t seed, int count,
                                             std::array<int, 3> dims);

// Volume file, little-endian: magic "CPV1", u32 version = 1, u8 has_label,
// u32 D,H,W, f32 image (row-major, W fastest), u8 label payload if present.
void write_volume(const VolumeSample& sample, const std::string& path);
VolumeSample read_volume(const std::string& path);

// Zero mean, unit population std. Kahan-compensated f32 sums keep the
// residual mean within 1e-5 even on large volumes. Constant input is an
// error.
Tensor normalize(const Tensor& image);

// Random patch crop, then independent axis flips (p = 0.5 each), then a
// quarter-turn rotation about a random axis. Image and label receive the
// identical transform. Draw order: crop z,y,x; flip z,y,x; axis; turns.
VolumeSample augment(const VolumeSample& sample, int patch, Rng& rng);

struct PatchBatch {
    Tensor images;  // [B,1,p,p,p]
    Tensor labels;  // [B,p,p,p]; undefined for unlabeled pools
};

// Draws `count` samples with replacement and augments each. All samples in
// the pool must agree on labeledness.
PatchBatch sample_patches(const std::vector<const VolumeSample*>& pool, int count, int patch,
                          Rng& rng);

struct Dataset {
    std::map<std::string, VolumeSample> volumes;
    DatasetSplit split;

    std::vector<const VolumeSample*> pool(const std::vector<std::string>& ids) const;
};

// First `n_labeled` of the train ids are labeled; val and test follow. Ids
// are assigned in generation order.
DatasetSplit make_split(const std::vector<std::string>& ids, int n_train, int n_val, int n_test,
                        float labeled_fraction);

// Writes volumes/<id>.cpv files plus a line-delimited manifest. Samples in
// the unlabeled train split are stored without their labels.
void write_dataset(const std::vector<VolumeSample>& samples, const DatasetSplit& split,
                   const std::string& out_dir);

// Loads every volume named by the manifest; images are normalized here so
// consumers never double-normalize.
Dataset load_dataset(const std::string& manifest_path);

}  // namespace cpcl
