#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nearfar/errors.hpp"
#include "nearfar/matrix.hpp"
#include "nearfar/memtrack.hpp"

namespace nearfar {

/// Square banded matrix in compact diagonal storage: 2k+1 bands, each of
/// length n, band d (offset in [-k, k]) holding entries (i, i+d).
/// Out-of-range slots stay zero. Storage is O(n·k), never O(n²).
class BandedMatrix {
  public:
    BandedMatrix() = default;
    BandedMatrix(std::size_t n, std::size_t bandwidth)
        : n_(n), k_(bandwidth), bands_((2 * bandwidth + 1) * n, 0.0) {
        if (bandwidth >= n && n > 0)
            throw ConfigError("BandedMatrix: bandwidth must be < n");
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t bandwidth() const noexcept { return k_; }

    bool in_band(std::size_t i, std::size_t j) const noexcept {
        const std::int64_t d = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(i);
        return d >= -static_cast<std::int64_t>(k_) && d <= static_cast<std::int64_t>(k_);
    }

    /// Entry (i, j); zero outside the band.
    double at(std::size_t i, std::size_t j) const noexcept {
        if (!in_band(i, j)) return 0.0;
        return bands_[slot(i, j)];
    }

    double& ref(std::size_t i, std::size_t j) {
        if (!in_band(i, j))
            throw DimensionError("BandedMatrix: entry outside band");
        return bands_[slot(i, j)];
    }

    /// In-band column range [first, last] for row i (non-causal).
    std::size_t row_begin(std::size_t i) const noexcept { return i >= k_ ? i - k_ : 0; }
    std::size_t row_end(std::size_t i) const noexcept {
        const std::size_t hi = i + k_;
        return hi < n_ ? hi : n_ - 1;
    }

    RealMatrix densify() const {
        RealMatrix out(n_, n_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = row_begin(i); j <= row_end(i); ++j) out(i, j) = at(i, j);
        return out;
    }

  private:
    std::size_t slot(std::size_t i, std::size_t j) const noexcept {
        const std::size_t band = j + k_ - i;  // offset d = j - i shifted by +k
        return band * n_ + i;
    }

    std::size_t n_ = 0;
    std::size_t k_ = 0;
    std::vector<double, memtrack::CountingAllocator<double>> bands_;
};

}  // namespace nearfar
