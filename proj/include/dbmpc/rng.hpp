#pragma once

#include <cstdint>

namespace dbmpc {

/// SplitMix64 generator. Used instead of <random> engines so that seeded
/// batches (verify runs, property suites) produce identical streams on every
/// platform and standard library.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform in [-mag, mag].
    double symmetric(double mag) { return uniform(-mag, mag); }

    /// Uniform index in [0, bound).
    std::size_t index(std::size_t bound) { return static_cast<std::size_t>(next() % bound); }

private:
    std::uint64_t state_;
};

} // namespace dbmpc
