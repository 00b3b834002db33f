#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace sot {

// Deterministic splittable RNG. Every random quantity in the project derives
// from one explicit 64-bit seed through this scheme:
//
//   stream state:  splitmix64 counter sequence seeded with mix(seed)
//   child streams: child_seed = mix(parent_seed ^ fnv1a64(label) ^ index)
//
// Gaussian variates use Box-Muller on top of the uniform stream, so results
// are bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(mix(seed)) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        cached_ = radius * std::sin(angle);
        have_cached_ = true;
        return radius * std::cos(angle);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Child stream keyed by a label and an index; independent of draws made
    // on the parent so far.
    Rng split(std::string_view label, std::uint64_t index = 0) const {
        return Rng(mix(seed_ ^ fnv1a64(label) ^ (0x9E3779B97F4A7C15ULL * (index + 1))));
    }

    std::uint64_t seed() const { return seed_; }

    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001B3ULL;
        }
        return h;
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace sot
