#pragma once

#include <cmath>
#include <cstdint>

namespace cpcl {

// SplitMix64. Chosen over std::mt19937 because the whole state is a single
// u64, which is what the checkpoint format stores and restores.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t state() const { return state_; }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    // Box-Muller, single branch. Deliberately does not cache the second
    // variate so the full generator state stays in `state_`.
    float normal(float mean, float sigma) {
        double u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        double z = r * std::cos(2.0 * 3.14159265358979323846 * u2);
        return mean + sigma * static_cast<float>(z);
    }

    // Uniform integer in [0, n). Lemire multiply-shift; fixed algorithm so
    // the draw sequence is part of the determinism contract.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    bool coin() { return next_double() < 0.5; }

    // Derives an independent substream label. Used to give weight init, each
    // training step's batch, and each step's noise their own streams, making
    // every draw a pure function of (seed, purpose, step).
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace cpcl
