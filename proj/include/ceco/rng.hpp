#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace ceco {

// Seeded generator with a portable normal sampler. std::normal_distribution
// is implementation-defined, so Box-Muller over mt19937_64 keeps fixtures
// identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal();

    // Uniform index in [0, n).
    std::size_t index(std::size_t n);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Derives an independent stream seed from a base seed and a salt
// (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

} // namespace ceco
