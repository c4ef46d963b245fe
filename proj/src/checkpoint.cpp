#include "cpcl/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cpcl {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kInitStream = 0x494e4954;  // weight-init substream tag

template <typename T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError(IoError::Kind::truncated, path + ": unexpected end of checkpoint");
    return value;
}

void write_section(std::ofstream& out, std::uint8_t kind, const ParamMap& params) {
    write_pod(out, kind);
    write_pod(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        write_pod(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint8_t>(tensor.ndim()));
        for (int d : tensor.shape()) write_pod(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(tensor.data().data()),
                  static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    }
}

ParamMap read_section(std::ifstream& in, const std::string& path, bool trainable) {
    ParamMap params;
    const auto count = read_pod<std::uint32_t>(in, path);
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = read_pod<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw IoError(IoError::Kind::truncated, path + ": unexpected end of checkpoint");
        const auto ndim = read_pod<std::uint8_t>(in, path);
        if (ndim == 0 || ndim > 8) {
            throw IoError(IoError::Kind::bad_shape,
                          path + ": parameter " + name + " declares " + std::to_string(ndim) + " dims");
        }
        std::vector<int> shape(ndim);
        std::size_t numel = 1;
        for (auto& d : shape) {
            const auto v = read_pod<std::uint32_t>(in, path);
            if (v == 0 || v > (1u << 24)) {
                throw IoError(IoError::Kind::bad_shape, path + ": parameter " + name + " has dim " +
                                                            std::to_string(v));
            }
            d = static_cast<int>(v);
            numel *= v;
            if (numel > (std::size_t{1} << 31)) {
                throw IoError(IoError::Kind::bad_shape, path + ": parameter " + name + " too large");
            }
        }
        std::vector<float> data(numel);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!in) throw IoError(IoError::Kind::truncated, path + ": unexpected end of checkpoint");
        Tensor t = Tensor::from_data(std::move(shape), std::move(data), trainable);
        if (!params.emplace(name, t).second) {
            throw IoError(IoError::Kind::bad_shape, path + ": duplicate parameter " + name);
        }
    }
    return params;
}

void check_aligned(const ParamMap& a, const ParamMap& b, const char* what,
                   const std::string& path) {
    if (a.size() != b.size()) {
        throw IoError(IoError::Kind::bad_shape,
                      path + ": " + what + " parameter set does not match the student's");
    }
    for (const auto& [name, tensor] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second.shape() != tensor.shape()) {
            throw IoError(IoError::Kind::bad_shape,
                          path + ": " + what + " mismatch at parameter " + name);
        }
    }
}

}  // namespace

ModelState init_model(const UNet& net, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, kInitStream));
    ModelState state;
    state.student = net.init_params(rng);
    for (const auto& [name, tensor] : state.student) {
        Tensor copy = tensor.clone();
        copy.set_requires_grad(false);
        state.teacher.emplace(name, copy);
        state.momentum.emplace(name, Tensor::zeros(tensor.shape()));
    }
    state.step = 0;
    state.rng_state = seed;
    return state;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::open_failed, path + ": cannot open for writing");
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, state.step);
    write_pod(out, state.rng_state);
    write_pod(out, static_cast<std::uint32_t>(3));
    write_section(out, 0, state.student);
    write_section(out, 1, state.teacher);
    write_section(out, 2, state.momentum);
    out.flush();
    if (!out) throw IoError(IoError::Kind::write_failed, path + ": write failed");
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError(IoError::Kind::bad_magic, path + ": not a checkpoint file");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw IoError(IoError::Kind::bad_version,
                      path + ": unsupported checkpoint version " + std::to_string(version));
    }
    ModelState state;
    state.step = read_pod<std::uint64_t>(in, path);
    state.rng_state = read_pod<std::uint64_t>(in, path);
    const auto sections = read_pod<std::uint32_t>(in, path);
    if (sections != 3) {
        throw IoError(IoError::Kind::bad_shape,
                      path + ": expected 3 sections, found " + std::to_string(sections));
    }
    bool have[3] = {false, false, false};
    for (std::uint32_t s = 0; s < 3; ++s) {
        const auto kind = read_pod<std::uint8_t>(in, path);
        if (kind > 2) {
            throw IoError(IoError::Kind::bad_shape,
                          path + ": unknown section kind " + std::to_string(kind));
        }
        if (have[kind]) {
            throw IoError(IoError::Kind::bad_shape,
                          path + ": duplicate section kind " + std::to_string(kind));
        }
        have[kind] = true;
        ParamMap map = read_section(in, path, kind == 0);
        if (kind == 0) state.student = std::move(map);
        else if (kind == 1) state.teacher = std::move(map);
        else state.momentum = std::move(map);
    }
    check_aligned(state.student, state.teacher, "teacher", path);
    check_aligned(state.student, state.momentum, "momentum", path);
    return state;
}

}  // namespace cpcl
