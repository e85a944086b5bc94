#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "nearfar/errors.hpp"
#include "nearfar/memtrack.hpp"

namespace nearfar {

/// Dense row-major matrix of 64-bit reals. The universal numeric carrier:
/// queries, keys, values, attention maps, gradients all live here.
/// Immutable-by-convention after construction in concurrent contexts.
class RealMatrix {
  public:
    using Storage = std::vector<double, memtrack::CountingAllocator<double>>;

    RealMatrix() = default;
    RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    RealMatrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_)
                throw DimensionError("RealMatrix: ragged initializer list");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static RealMatrix identity(std::size_t n) {
        RealMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    double* row_ptr(std::size_t i) noexcept { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const noexcept { return data_.data() + i * cols_; }
    std::span<double> row(std::size_t i) noexcept { return {row_ptr(i), cols_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {row_ptr(i), cols_}; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool all_finite() const noexcept;

    bool same_shape(const RealMatrix& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Storage data_;
};

/// a · b. Throws DimensionError when a.cols != b.rows.
RealMatrix matmul(const RealMatrix& a, const RealMatrix& b);

/// aᵀ · b without materializing the transpose.
RealMatrix matmul_atb(const RealMatrix& a, const RealMatrix& b);

/// a · bᵀ without materializing the transpose.
RealMatrix matmul_abt(const RealMatrix& a, const RealMatrix& b);

/// Row-wise softmax with per-row max subtraction; rows sum to 1.
RealMatrix row_softmax(const RealMatrix& m);

RealMatrix transpose(const RealMatrix& m);

RealMatrix add(const RealMatrix& a, const RealMatrix& b);
RealMatrix sub(const RealMatrix& a, const RealMatrix& b);
RealMatrix scaled(const RealMatrix& a, double s);

/// In-place y += s · x.
void axpy(RealMatrix& y, double s, const RealMatrix& x);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double frobenius_norm(const RealMatrix& m) noexcept;
double max_abs(const RealMatrix& m) noexcept;
double max_abs_diff(const RealMatrix& a, const RealMatrix& b);

}  // namespace nearfar
