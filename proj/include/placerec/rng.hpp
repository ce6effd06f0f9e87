#ifndef PLACEREC_RNG_HPP
#define PLACEREC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace placerec {

// Deterministic random source. mt19937_64 output is pinned by the standard,
// but the std distributions are not, so the sampling transforms live here.
// Every randomized component of the toolkit draws through this class.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t u64() { return engine_(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    uint64_t index(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

    // Standard normal via Box-Muller; caches the second deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = real01();
        } while (u1 <= 0.0);
        u2 = real01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace placerec

#endif
