#pragma once

#include <vector>

#include "nearfar/matrix.hpp"

namespace nearfar {

/// Thin SVD: m = left_vectors · diag(singular_values) · right_vectorsᵀ,
/// with k = min(rows, cols) columns in each factor and σ sorted non-increasing.
struct SvdResult {
    std::vector<double> singular_values;
    RealMatrix left_vectors;
    RealMatrix right_vectors;
};

/// One-sided Jacobi SVD. Iterates sweeps until every column pair is
/// orthogonal to relative tolerance 1e-12; throws NumericError if the
/// sweep cap is hit or the input is not finite.
SvdResult svd(const RealMatrix& m);

}  // namespace nearfar
