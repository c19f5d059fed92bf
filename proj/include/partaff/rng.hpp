#pragma once

#include <cstdint>
#include <random>

namespace partaff {

/// Seeded random stream with platform-independent draws. The standard
/// distributions are implementation-defined, so uniform and normal variates
/// are derived directly from the raw 64-bit engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive), rejection sampled.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller; the spare variate is cached.
    double normal();

    /// Independent child stream; deterministic in (this stream, tag).
    Rng split(std::uint64_t tag);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace partaff
