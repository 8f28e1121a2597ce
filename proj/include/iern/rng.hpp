#pragma once

#include <cmath>
#include <cstdint>

#include "iern/error.hpp"

namespace iern {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Self-contained xoshiro256++ generator. std::mt19937 with std distributions is
// not bit-reproducible across standard libraries; everything seeded here is.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = detail::splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw ContractError("uniform_int: n must be positive");
        const auto un = static_cast<std::uint64_t>(n);
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return static_cast<std::int64_t>(v % un);
    }

    /// Standard normal via Box-Muller (no cached spare, stays stateless per draw pair).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

/// Deterministic sub-seed derivation: mixes a base seed with up to three tags.
/// Used to give every component / sample / cell an independent stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t s = base;
    std::uint64_t h = detail::splitmix64(s);
    s ^= a + 0x9e3779b97f4a7c15ULL;
    h ^= detail::splitmix64(s);
    s ^= b + 0x7f4a7c159e3779b9ULL;
    h ^= detail::splitmix64(s);
    s ^= c + 0x3779b97f4a7c159eULL;
    h ^= detail::splitmix64(s);
    return h;
}

/// Sub-seed keyed by a short string (component names) plus optional indices.
inline std::uint64_t derive_seed(std::uint64_t base, const char* tag, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char* p = tag; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 1099511628211ULL;
    }
    return derive_seed(base, h, a, b);
}

}  // namespace iern
