#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace embed_router::nn {

// xoshiro256** seeded by SplitMix64 expansion of a 64-bit seed. The output
// stream depends only on the seed; no std::*_distribution is used so draws
// are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Seed for an independent named stream derived from a base seed.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next();
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n);
    // Standard normal via Box-Muller (one draw per pair of uniforms).
    double normal();

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> s_{};
};

}  // namespace embed_router::nn
