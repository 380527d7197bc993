#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "raediff/tensor.hpp"

namespace raediff {

// SplitMix64 step. Used instead of the std engines so that every noise
// stream is bit-identical across compilers and standard libraries; the
// manifest format relies on other implementations being able to replay
// streams from the recorded seeds.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Seed-derivation rule recorded in manifests:
///   derive_seed(s, i) = splitmix64(s + (i + 1) * 0x9E3779B97F4A7C15)
/// Per-image seeds are derive_seed(master_seed, image_index); the stream
/// for (image, level m) is seeded with derive_seed(image_seed, m), and
/// restoration uses derive_seed(derive_seed(image_seed, m), 1ull << 32) so
/// its draws are independent of the protection stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t state = seed + (index + 1) * 0x9E3779B97F4A7C15ull;
    return splitmix64_next(state);
}

constexpr std::uint64_t kRestoreStreamTag = 1ull << 32;

/// Deterministic generator: SplitMix64 for uniforms, Box-Muller (trig form,
/// cached spare) for Gaussians. Consumption order is part of the replay
/// contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t next_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline ImageTensor gaussian_tensor(int h, int w, int c, Rng& rng) {
    ImageTensor out(h, w, c);
    for (double& v : out.values) v = rng.next_gaussian();
    return out;
}

inline ImageTensor gaussian_like(const ImageTensor& shape, Rng& rng) {
    return gaussian_tensor(shape.height, shape.width, shape.channels, rng);
}

}  // namespace raediff
