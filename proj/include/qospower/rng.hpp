#pragma once

#include <cmath>
#include <cstdint>

namespace qospower {

// Deterministic counter-free PRNG (xoshiro256**). Hand-rolled so that sample
// streams are bit-identical across standard libraries; std::normal_distribution
// is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        // splitmix64 seeding as recommended by the xoshiro authors
        uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            si = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (pairs cached)
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        cached_ = mag * std::sin(6.283185307179586476925286766559 * u2);
        have_cached_ = true;
        return mag * std::cos(6.283185307179586476925286766559 * u2);
    }

    // integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// Per-sample stream derivation: mixes the dataset seed with the sample index
// so generation parallelizes without shared state.
inline uint64_t derive_stream(uint64_t seed, uint64_t index) {
    return seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
}

}  // namespace qospower
