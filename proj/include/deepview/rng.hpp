#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace deepview {

/// Seeded generator with distribution code that does not depend on the
/// standard library vendor, so seeded runs reproduce bit-for-bit everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(engine_()) * bound) >> 64);
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename Range>
    void shuffle(Range& r) {
        for (auto i = static_cast<std::uint64_t>(r.size()); i > 1; --i) {
            const auto j = below(i);
            std::swap(r[i - 1], r[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace deepview
