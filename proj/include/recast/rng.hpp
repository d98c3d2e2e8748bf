#pragma once

#include <cmath>
#include <cstdint>

namespace recast {

// Deterministic, platform-independent RNG (xoshiro256++ seeded via splitmix64).
// std::normal_distribution is implementation-defined, so normal() is a
// hand-rolled Box-Muller with a cached spare.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
    }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() {
        uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n > 0
    uint64_t below(uint64_t n) {
        // rejection sampling keeps the draw unbiased
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int range(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), safe at u1=0
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Independent stream for a (seed, stream-id) pair. Used to make per-step
    // and per-sample randomness stateless, which keeps resumed runs bit-exact.
    static Rng fork(uint64_t seed, uint64_t stream) {
        uint64_t x = seed ^ (0x632be59bd9b4e019ULL * (stream + 1));
        uint64_t mixed = splitmix64(x);
        return Rng(mixed ^ stream);
    }

private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace recast
