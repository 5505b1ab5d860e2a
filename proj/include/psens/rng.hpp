#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace psens::rng {

/// SplitMix64 step (Steele, Lea, Flood 2014). Used for seeding and for
/// deriving independent streams by stable hashing.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Stable stream derivation: hash (seed, salt, index) into a new 64-bit key.
/// Independent of platform and call order.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t salt, std::uint64_t index = 0) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s = a ^ (salt * 0x9e3779b97f4a7c15ull);
    std::uint64_t b = splitmix64(s);
    s = b ^ (index * 0xd1b54a32d192ed03ull);
    return splitmix64(s);
}

// Stream salts: keep the per-purpose substreams of a master seed disjoint.
inline constexpr std::uint64_t kSaltMarginal = 0x6d61726769ull;
inline constexpr std::uint64_t kSaltNoise = 0x6e6f697365ull;
inline constexpr std::uint64_t kSaltRepetition = 0x72657000ull;
inline constexpr std::uint64_t kSaltThreshold = 0x7468726573ull;

/// xoshiro256++ (Blackman, Vigna 2019). Per-sample generators are seeded via
/// SplitMix64 from a derived key, so draws for sample i never depend on the
/// draws taken for any other sample.
class Xoshiro256pp {
  public:
    explicit Xoshiro256pp(std::uint64_t key) {
        std::uint64_t s = key;
        for (auto& w : state_) w = splitmix64(s);
    }

    std::uint64_t next() {
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

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1]; safe as a log() argument.
    double uniform_pos() { return 1.0 - uniform(); }

    /// Standard normal via Box-Muller (two uniforms, no rejection).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape < 1 handled by the
    /// boost x = Gamma(shape+1) * u^(1/shape).
    double gamma(double shape) {
        if (shape < 1.0) {
            const double u = uniform_pos();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double z = normal();
            const double f = 1.0 + c * z;
            if (f <= 0.0) continue;
            const double v = f * f * f;
            const double u = uniform_pos();
            if (std::log(u) < 0.5 * z * z + d - d * v + d * std::log(v)) return d * v;
        }
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

} // namespace psens::rng
