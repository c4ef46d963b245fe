#include "cpcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cpcl/ops.hpp"

namespace fs = std::filesystem;

namespace cpcl {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'V', '1'};
constexpr std::uint32_t kVersion = 1;

std::string volume_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "vol%03d", index);
    return buf;
}

template <typename T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError(IoError::Kind::truncated, path + ": unexpected end of volume file");
    return value;
}

// Kahan-compensated sequential sum; f32 arithmetic with O(eps) error.
float compensated_sum(const float* v, std::size_t n, const float* center = nullptr,
                      bool squared = false) {
    float sum = 0.0f, c = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        float x = v[i];
        if (center) x -= *center;
        if (squared) x *= x;
        float y = x - c;
        float t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

}  // namespace

std::vector<VolumeSample> generate_synthetic(std::uint64_t seed, int count,
                                             std::array<int, 3> dims) {
    for (int d : dims) {
        if (d < 16) throw ValueError("generate_synthetic: dims must be >= 16 per axis");
    }
    if (count < 1) throw ValueError("generate_synthetic: count must be >= 1");

    const int D = dims[0], H = dims[1], W = dims[2];
    const std::size_t n = static_cast<std::size_t>(D) * H * W;

    std::vector<VolumeSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int v = 0; v < count; ++v) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(v)));

        // Smooth bias field: a 4x4x4 random grid blown up trilinearly. Its
        // amplitude approaches the dimmest lesion contrast, so absolute
        // intensity alone cannot separate the classes.
        Tensor grid = rand_uniform({1, 1, 4, 4, 4}, -0.5f, 0.5f, rng);
        Tensor bias = trilinear_resize(grid, {D, H, W});

        std::vector<float> image(bias.data().begin(), bias.data().end());
        std::vector<float> label(n, 0.0f);

        // Centers sit in the interior; semi-axes scale with the volume
        // (dim/6 to dim/3 per axis) so lesions stay several feature voxels
        // wide after the network's downsamplings. Foreground is never empty;
        // redraw only if the union swallows the whole volume (possible for
        // small dims).
        struct Ellipsoid {
            float cz, cy, cx, rz, ry, rx, contrast;
        };
        std::vector<Ellipsoid> ells;
        for (;;) {
            ells.clear();
            const int n_ell = 1 + static_cast<int>(rng.below(3));
            for (int e = 0; e < n_ell; ++e) {
                Ellipsoid el;
                el.cz = rng.uniform(0.2f * static_cast<float>(D), 0.8f * static_cast<float>(D));
                el.cy = rng.uniform(0.2f * static_cast<float>(H), 0.8f * static_cast<float>(H));
                el.cx = rng.uniform(0.2f * static_cast<float>(W), 0.8f * static_cast<float>(W));
                el.rz = rng.uniform(static_cast<float>(D) / 6.0f, static_cast<float>(D) / 3.0f);
                el.ry = rng.uniform(static_cast<float>(H) / 6.0f, static_cast<float>(H) / 3.0f);
                el.rx = rng.uniform(static_cast<float>(W) / 6.0f, static_cast<float>(W) / 3.0f);
                el.contrast = rng.uniform(0.5f, 1.5f);
                ells.push_back(el);
            }
            std::fill(label.begin(), label.end(), 0.0f);
            for (const auto& el : ells) {
                std::size_t i = 0;
                for (int z = 0; z < D; ++z) {
                    float dz = (static_cast<float>(z) - el.cz) / el.rz;
                    for (int y = 0; y < H; ++y) {
                        float dy = (static_cast<float>(y) - el.cy) / el.ry;
                        for (int x = 0; x < W; ++x, ++i) {
                            float dx = (static_cast<float>(x) - el.cx) / el.rx;
                            if (dz * dz + dy * dy + dx * dx <= 1.0f) label[i] = 1.0f;
                        }
                    }
                }
            }
            if (std::find(label.begin(), label.end(), 0.0f) != label.end()) break;
        }
        // Intensity falls off smoothly across the label boundary (full
        // contrast inside r=0.9, cosine ramp to zero at r=1.1), so the true
        // edge sits at half contrast and cannot be read off a threshold.
        for (const auto& el : ells) {
            std::size_t i = 0;
            for (int z = 0; z < D; ++z) {
                float dz = (static_cast<float>(z) - el.cz) / el.rz;
                for (int y = 0; y < H; ++y) {
                    float dy = (static_cast<float>(y) - el.cy) / el.ry;
                    for (int x = 0; x < W; ++x, ++i) {
                        float dx = (static_cast<float>(x) - el.cx) / el.rx;
                        const float r2 = dz * dz + dy * dy + dx * dx;
                        if (r2 >= 1.21f) continue;
                        const float r = std::sqrt(r2);
                        const float f =
                            r <= 0.9f
                                ? 1.0f
                                : 0.5f * (1.0f + std::cos((r - 0.9f) * (3.14159265f / 0.2f)));
                        image[i] += el.contrast * f;
                    }
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) image[i] += rng.normal(0.0f, 0.2f);

        VolumeSample s;
        s.id = volume_id(v);
        s.image = Tensor::from_data({D, H, W}, std::move(image));
        s.label = Tensor::from_data({D, H, W}, std::move(label));
        s.labeled = true;
        out.push_back(std::move(s));
    }
    return out;
}

void write_volume(const VolumeSample& sample, const std::string& path) {
    if (!sample.image.defined() || sample.image.ndim() != 3) {
        throw ValueError("write_volume: image must be [D,H,W]");
    }
    if (sample.labeled != sample.label.defined()) {
        throw ValueError("write_volume: label must be present iff the sample is labeled");
    }
    if (sample.labeled && sample.label.shape() != sample.image.shape()) {
        throw ShapeError("write_volume: label dims differ from image dims");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::open_failed, path + ": cannot open for writing");
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint8_t>(sample.labeled ? 1 : 0));
    for (int axis = 0; axis < 3; ++axis) {
        write_pod(out, static_cast<std::uint32_t>(sample.image.dim(axis)));
    }
    out.write(reinterpret_cast<const char*>(sample.image.data().data()),
              static_cast<std::streamsize>(sample.image.numel() * sizeof(float)));
    if (sample.labeled) {
        std::vector<std::uint8_t> bytes(sample.label.numel());
        const float* lv = sample.label.data().data();
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            if (lv[i] != 0.0f && lv[i] != 1.0f) {
                throw ValueError("write_volume: label values must be 0 or 1");
            }
            bytes[i] = lv[i] != 0.0f ? 1 : 0;
        }
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    out.flush();
    if (!out) throw IoError(IoError::Kind::write_failed, path + ": write failed");
}

VolumeSample read_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError(IoError::Kind::bad_magic, path + ": not a volume file");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw IoError(IoError::Kind::bad_version,
                      path + ": unsupported volume version " + std::to_string(version));
    }
    const auto has_label = read_pod<std::uint8_t>(in, path);
    if (has_label > 1) {
        throw IoError(IoError::Kind::bad_shape, path + ": has_label flag must be 0 or 1");
    }
    std::vector<int> dims(3);
    std::size_t n = 1;
    for (auto& d : dims) {
        const auto v = read_pod<std::uint32_t>(in, path);
        if (v == 0 || v > (1u << 16)) {
            throw IoError(IoError::Kind::bad_shape, path + ": bad dimension " + std::to_string(v));
        }
        d = static_cast<int>(v);
        n *= v;
        if (n > (std::size_t{1} << 31)) {
            throw IoError(IoError::Kind::bad_shape, path + ": volume too large");
        }
    }
    std::vector<float> image(n);
    in.read(reinterpret_cast<char*>(image.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) {
        throw IoError(IoError::Kind::truncated,
                      path + ": image payload needs " + std::to_string(n * sizeof(float)) +
                          " bytes, got " + std::to_string(in.gcount()));
    }
    VolumeSample s;
    s.id = fs::path(path).stem().string();
    s.image = Tensor::from_data(dims, std::move(image));
    s.labeled = has_label == 1;
    if (s.labeled) {
        std::vector<std::uint8_t> bytes(n);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
        if (!in) {
            throw IoError(IoError::Kind::truncated,
                          path + ": label payload needs " + std::to_string(n) + " bytes, got " +
                              std::to_string(in.gcount()));
        }
        std::vector<float> label(n);
        for (std::size_t i = 0; i < n; ++i) label[i] = bytes[i] != 0 ? 1.0f : 0.0f;
        s.label = Tensor::from_data(dims, std::move(label));
    }
    return s;
}

Tensor normalize(const Tensor& image) {
    if (!image.defined() || image.numel() == 0) throw ValueError("normalize: undefined image");
    const float* v = image.data().data();
    const std::size_t n = image.numel();
    const float inv_n = 1.0f / static_cast<float>(n);
    const float m = compensated_sum(v, n) * inv_n;
    const float var = compensated_sum(v, n, &m, true) * inv_n;
    if (var <= 0.0f) throw ValueError("normalize: constant image has no scale");
    const float inv_sd = 1.0f / std::sqrt(var);
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - m) * inv_sd;
    return Tensor::from_data(image.shape(), std::move(out));
}

namespace {

struct Geometry {
    int oz, oy, ox;      // crop origin
    bool fz, fy, fx;     // flips
    int axis, turns;     // quarter-turn rotation
};

std::vector<float> apply_geometry(const float* src, const std::vector<int>& dims, int p,
                                  const Geometry& g) {
    const int H = dims[1], W = dims[2];
    std::vector<float> a(static_cast<std::size_t>(p) * p * p);
    std::size_t i = 0;
    for (int z = 0; z < p; ++z) {
        for (int y = 0; y < p; ++y) {
            const float* row = src + (static_cast<std::size_t>(g.oz + z) * H + (g.oy + y)) * W + g.ox;
            for (int x = 0; x < p; ++x, ++i) a[i] = row[x];
        }
    }
    auto idx = [p](int z, int y, int x) {
        return (static_cast<std::size_t>(z) * p + y) * p + x;
    };
    std::vector<float> b(a.size());
    for (int z = 0; z < p; ++z) {
        for (int y = 0; y < p; ++y) {
            for (int x = 0; x < p; ++x) {
                b[idx(g.fz ? p - 1 - z : z, g.fy ? p - 1 - y : y, g.fx ? p - 1 - x : x)] =
                    a[idx(z, y, x)];
            }
        }
    }
    for (int t = 0; t < g.turns; ++t) {
        // One quarter turn in the plane orthogonal to g.axis: (u,v) -> (v, p-1-u).
        for (int z = 0; z < p; ++z) {
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    if (g.axis == 0) a[idx(z, x, p - 1 - y)] = b[idx(z, y, x)];
                    else if (g.axis == 1) a[idx(x, y, p - 1 - z)] = b[idx(z, y, x)];
                    else a[idx(y, p - 1 - z, x)] = b[idx(z, y, x)];
                }
            }
        }
        std::swap(a, b);
    }
    return b;
}

}  // namespace

VolumeSample augment(const VolumeSample& sample, int patch, Rng& rng) {
    if (!sample.image.defined() || sample.image.ndim() != 3) {
        throw ValueError("augment: image must be [D,H,W]");
    }
    if (patch < 1) throw ValueError("augment: patch must be >= 1");
    const auto& dims = sample.image.shape();
    for (int d : dims) {
        if (patch > d) {
            throw ShapeError("augment: patch " + std::to_string(patch) + " exceeds volume " +
                             shape_str(dims));
        }
    }
    Geometry g;
    g.oz = static_cast<int>(rng.below(static_cast<std::uint64_t>(dims[0] - patch + 1)));
    g.oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(dims[1] - patch + 1)));
    g.ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(dims[2] - patch + 1)));
    g.fz = rng.coin();
    g.fy = rng.coin();
    g.fx = rng.coin();
    g.axis = static_cast<int>(rng.below(3));
    g.turns = static_cast<int>(rng.below(4));

    VolumeSample out;
    out.id = sample.id;
    out.labeled = sample.labeled;
    out.image = Tensor::from_data({patch, patch, patch},
                                  apply_geometry(sample.image.data().data(), dims, patch, g));
    if (sample.labeled) {
        out.label = Tensor::from_data({patch, patch, patch},
                                      apply_geometry(sample.label.data().data(), dims, patch, g));
    }
    return out;
}

PatchBatch sample_patches(const std::vector<const VolumeSample*>& pool, int count, int patch,
                          Rng& rng) {
    if (pool.empty()) throw ValueError("sample_patches: empty pool");
    if (count < 1) throw ValueError("sample_patches: count must be >= 1");
    const bool labeled = pool.front()->labeled;
    for (const auto* s : pool) {
        if (s->labeled != labeled) throw ValueError("sample_patches: mixed labeledness in pool");
    }
    const std::size_t voxels = static_cast<std::size_t>(patch) * patch * patch;
    std::vector<float> images(static_cast<std::size_t>(count) * voxels);
    std::vector<float> labels(labeled ? images.size() : 0);
    for (int b = 0; b < count; ++b) {
        const auto* s = pool[static_cast<std::size_t>(rng.below(pool.size()))];
        VolumeSample cropped = augment(*s, patch, rng);
        std::memcpy(images.data() + static_cast<std::size_t>(b) * voxels,
                    cropped.image.data().data(), voxels * sizeof(float));
        if (labeled) {
            std::memcpy(labels.data() + static_cast<std::size_t>(b) * voxels,
                        cropped.label.data().data(), voxels * sizeof(float));
        }
    }
    PatchBatch batch;
    batch.images = Tensor::from_data({count, 1, patch, patch, patch}, std::move(images));
    if (labeled) {
        batch.labels = Tensor::from_data({count, patch, patch, patch}, std::move(labels));
    }
    return batch;
}

std::vector<const VolumeSample*> Dataset::pool(const std::vector<std::string>& ids) const {
    std::vector<const VolumeSample*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = volumes.find(id);
        if (it == volumes.end()) throw ValueError("dataset: unknown volume id " + id);
        out.push_back(&it->second);
    }
    return out;
}

DatasetSplit make_split(const std::vector<std::string>& ids, int n_train, int n_val, int n_test,
                        float labeled_fraction) {
    if (n_train < 1 || n_val < 0 || n_test < 0) throw ValueError("make_split: bad split sizes");
    if (static_cast<std::size_t>(n_train + n_val + n_test) != ids.size()) {
        throw ValueError("make_split: split sizes must cover all " + std::to_string(ids.size()) +
                         " ids");
    }
    if (labeled_fraction <= 0.0f || labeled_fraction > 1.0f) {
        throw ValueError("make_split: labeled_fraction must be in (0, 1]");
    }
    int n_labeled = static_cast<int>(std::lround(labeled_fraction * static_cast<float>(n_train)));
    n_labeled = std::clamp(n_labeled, 1, n_train);

    DatasetSplit split;
    split.labeled_fraction = labeled_fraction;
    for (int i = 0; i < n_train; ++i) {
        auto& list = i < n_labeled ? split.train_labeled : split.train_unlabeled;
        list.push_back(ids[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < n_val; ++i) split.val.push_back(ids[static_cast<std::size_t>(n_train + i)]);
    for (int i = 0; i < n_test; ++i) {
        split.test.push_back(ids[static_cast<std::size_t>(n_train + n_val + i)]);
    }
    return split;
}

void write_dataset(const std::vector<VolumeSample>& samples, const DatasetSplit& split,
                   const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "volumes", ec);
    if (ec) throw IoError(IoError::Kind::open_failed, out_dir + ": cannot create dataset dirs");

    std::map<std::string, std::string> tag;
    for (const auto& id : split.train_labeled) tag[id] = "train_labeled";
    for (const auto& id : split.train_unlabeled) tag[id] = "train_unlabeled";
    for (const auto& id : split.val) tag[id] = "val";
    for (const auto& id : split.test) tag[id] = "test";

    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    std::ofstream manifest(manifest_path, std::ios::trunc);
    if (!manifest) throw IoError(IoError::Kind::open_failed, manifest_path + ": cannot open");

    for (const auto& s : samples) {
        auto it = tag.find(s.id);
        if (it == tag.end()) throw ValueError("write_dataset: sample " + s.id + " not in split");
        const std::string rel = "volumes/" + s.id + ".cpv";
        VolumeSample to_write = s;
        if (it->second == "train_unlabeled") {
            to_write.label = Tensor();
            to_write.labeled = false;
        }
        write_volume(to_write, (fs::path(out_dir) / rel).string());
        nlohmann::json rec{{"id", s.id},
                           {"path", rel},
                           {"labeled", to_write.labeled},
                           {"split", it->second}};
        manifest << rec.dump() << "\n";
    }
    manifest << std::flush;
    if (!manifest) throw IoError(IoError::Kind::write_failed, manifest_path + ": write failed");
}

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError(IoError::Kind::open_failed, manifest_path + ": cannot open");
    const fs::path base = fs::path(manifest_path).parent_path();

    Dataset ds;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("id") || !rec.contains("path") ||
            !rec.contains("labeled") || !rec.contains("split")) {
            throw IoError(IoError::Kind::bad_shape, manifest_path + ":" + std::to_string(line_no) +
                                                        ": malformed manifest record");
        }
        const std::string id = rec["id"].get<std::string>();
        const std::string split_tag = rec["split"].get<std::string>();
        VolumeSample s = read_volume((base / rec["path"].get<std::string>()).string());
        s.id = id;
        if (s.labeled != rec["labeled"].get<bool>()) {
            throw IoError(IoError::Kind::bad_shape,
                          manifest_path + ": labeled flag for " + id + " disagrees with the file");
        }
        s.image = normalize(s.image);
        if (!ds.volumes.emplace(id, std::move(s)).second) {
            throw IoError(IoError::Kind::bad_shape, manifest_path + ": duplicate id " + id);
        }
        if (split_tag == "train_labeled") ds.split.train_labeled.push_back(id);
        else if (split_tag == "train_unlabeled") ds.split.train_unlabeled.push_back(id);
        else if (split_tag == "val") ds.split.val.push_back(id);
        else if (split_tag == "test") ds.split.test.push_back(id);
        else {
            throw IoError(IoError::Kind::bad_shape,
                          manifest_path + ": unknown split tag " + split_tag);
        }
    }
    const int n_l = static_cast<int>(ds.split.train_labeled.size());
    const int n_u = static_cast<int>(ds.split.train_unlabeled.size());
    if (n_l + n_u > 0) {
        ds.split.labeled_fraction = static_cast<float>(n_l) / static_cast<float>(n_l + n_u);
    }
    return ds;
}

}  // namespace cpcl
