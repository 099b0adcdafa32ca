#pragma once

#include <cstdint>

#include "predloop/vec2.hpp"

namespace predloop {

/// Mix a value into a seed (splitmix64 finalizer). Used both as the RNG step
/// and to derive independent child streams from (seed, tag, index...) tuples,
/// so results never depend on thread scheduling or call interleaving.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// Small deterministic RNG (splitmix64 stream). Distributions are hand-rolled
/// so sequences are identical on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be > 0.
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    /// Standard normal via Box-Muller (no cached spare, so the draw count per
    /// call is fixed).
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::uint64_t state_;
};

/// Derive a child seed for a named stream. `tag` is a small constant unique to
/// the consumer (see stream_tags below).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    return hash_combine(hash_combine(hash_combine(base, tag), a), b);
}

namespace stream_tags {
inline constexpr std::uint64_t kScenarioGen = 0x5ce0a01;
inline constexpr std::uint64_t kOracleNoise = 0x0e4c1e2;
inline constexpr std::uint64_t kDespotSearch = 0xde59073;
inline constexpr std::uint64_t kBeliefResample = 0xbe11ef4;
inline constexpr std::uint64_t kScenarioSeed = 0x5eed5;
}  // namespace stream_tags

}  // namespace predloop
