#pragma once

#include <cstdint>
#include <random>

#include "trisplat/vec.hpp"

namespace ts {

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distributions below are hand-rolled because std:: distributions are
// implementation-defined and would break byte-identical reruns.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Derive an independent stream for a named purpose (splitmix64 mixing).
    Rng fork(std::uint64_t stream_id) const {
        std::uint64_t z = seed_mix_ + stream_id * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0, 1)
        return (next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_cached_) {
            have_cached_ = false;
            return mean + stddev * cached_;
        }
        double u1 = 0, u2 = 0;
        do { u1 = uniform(); } while (u1 <= 1e-300);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return mean + stddev * r * std::cos(a);
    }

    Vec3 uniform_vec3(double lo, double hi) {
        double x = uniform(lo, hi), y = uniform(lo, hi), z = uniform(lo, hi);
        return {x, y, z};
    }
    Vec3 unit_vec3() {
        // Marsaglia rejection on the sphere.
        for (;;) {
            double x = uniform(-1, 1), y = uniform(-1, 1), z = uniform(-1, 1);
            double n2 = x * x + y * y + z * z;
            if (n2 > 1e-12 && n2 <= 1.0) return Vec3{x, y, z} / std::sqrt(n2);
        }
    }

private:
    explicit Rng(std::uint64_t seed, int) : gen_(seed) {}
    std::mt19937_64 gen_;
    std::uint64_t seed_mix_ = gen_();
    double cached_ = 0;
    bool have_cached_ = false;
};

}  // namespace ts
