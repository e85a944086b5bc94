#pragma once

#include <cstdint>

#include "nearfar/errors.hpp"
#include "nearfar/matrix.hpp"

namespace nearfar {

/// Counter-based deterministic generator (splitmix64 over seed + counter·γ).
/// Identical seed gives a bit-identical stream on every platform; no hidden
/// global state, so every experiment replays from one integer.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) noexcept : seed_(seed) {}

    std::uint64_t next_u64() noexcept {
        std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
    std::uint64_t next_below(std::uint64_t n) noexcept { return next_u64() % n; }

    std::uint64_t seed() const noexcept { return seed_; }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

/// Matrix with i.i.d. entries uniform in (-scale, scale).
inline RealMatrix rand_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    if (!(scale > 0.0)) throw ConfigError("rand_matrix: scale must be > 0");
    RealMatrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
    return m;
}

}  // namespace nearfar
