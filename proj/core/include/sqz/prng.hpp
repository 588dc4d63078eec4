#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sqz {

// splitmix64 (Steele et al.) -- used to expand seeds and derive substreams.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive an independent stream seed from a master seed and up to three
/// tags (e.g. user id, purpose, index). Same inputs give the same stream
/// on every platform.
inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = master;
    uint64_t h = splitmix64(s);
    s ^= a + 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b + 0xbf58476d1ce4e5b9ULL;
    h ^= splitmix64(s);
    s ^= c + 0x94d049bb133111ebULL;
    h ^= splitmix64(s);
    return h;
}

// Purpose tags for derive_seed so streams never collide across subsystems.
namespace stream {
inline constexpr uint64_t kCoarseCenters = 0x01;
inline constexpr uint64_t kFineCenters   = 0x02;
inline constexpr uint64_t kNoise         = 0x03;
inline constexpr uint64_t kRanking       = 0x04;
inline constexpr uint64_t kUserClusters  = 0x05;
inline constexpr uint64_t kUserItems     = 0x06;
inline constexpr uint64_t kCodebookInit  = 0x07;
inline constexpr uint64_t kCodebookDead  = 0x08;
inline constexpr uint64_t kKmeansInit    = 0x09;
inline constexpr uint64_t kLshPlanes     = 0x0a;
inline constexpr uint64_t kMhaParams     = 0x0b;
inline constexpr uint64_t kReplay        = 0x0c;
} // namespace stream

/// xoshiro256** with splitmix64 seeding. Portable: the exact output
/// sequence for a given seed is pinned by the algorithm, not the
/// standard library, so seeded runs reproduce across platforms.
class Prng {
public:
    explicit Prng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Unbiased integer in [0, n). n must be >= 1.
    uint64_t bounded(uint64_t n) {
        // Lemire's multiply-shift with rejection
        uint64_t x = next_u64();
        unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            const uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                x = next_u64();
                m = static_cast<unsigned __int128>(x) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4]{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace sqz
