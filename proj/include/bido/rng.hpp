#pragma once

#include <cstdint>
#include <random>

namespace bido {

// std::*_distribution output is implementation-defined; these helpers are
// built directly on the engine bits so streams are identical everywhere.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint8_t byte() { return static_cast<std::uint8_t>(engine_() >> 56); }

    // Derive an independent stream for a child id (splitmix64 finalizer).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t id) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (id + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

   private:
    std::mt19937_64 engine_;
};

}  // namespace bido
