#ifndef FSSEG_RNG_HPP
#define FSSEG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fsseg {

/// Counter-based deterministic random stream (splitmix64 core). The draw
/// sequence depends only on the seed, never on platform library details,
/// so identical seeds reproduce bit-identical runs everywhere.
class RngStream {
public:
    explicit RngStream(uint64_t seed = 0) : seed_(seed), counter_(0) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() {
        uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (++counter_);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi], inclusive.
    int64_t next_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw std::invalid_argument("RngStream::next_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(next_u64());  // full-width range
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * span;
        return lo + static_cast<int64_t>(m >> 64);
    }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller on our own uniforms.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool next_bool() { return (next_u64() & 1ULL) != 0; }

    /// Derive an independent child stream. Child sequences are stable under
    /// reordering of draws on the parent.
    RngStream fork(uint64_t tag) const { return RngStream(mix(seed_ ^ mix(tag ^ 0xA076'1D64'78BD'642FULL))); }

    RngStream fork(const std::string& tag) const {
        uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
        for (unsigned char c : tag) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return fork(h);
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
        return z ^ (z >> 33);
    }

    uint64_t seed_;
    uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace fsseg

#endif
