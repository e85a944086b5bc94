#include "nearfar/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nearfar/errors.hpp"

namespace nearfar {

namespace {

constexpr double kOrthTol = 1e-12;
constexpr int kMaxSweeps = 64;

// One-sided Jacobi on a tall (rows >= cols) work matrix: rotates column
// pairs until mutual orthogonality, accumulating rotations into V.
SvdResult jacobi_tall(RealMatrix a) {
    const std::size_t n = a.rows(), c = a.cols();
    RealMatrix v = RealMatrix::identity(c);

    std::vector<double> norm2(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += a(i, j) * a(i, j);
        norm2[j] = s;
    }
    const double max_norm2 = c ? *std::max_element(norm2.begin(), norm2.end()) : 0.0;
    // Columns whose norm collapses this far are numerically zero (sigma below
    // 1e-14 of the largest); rotating against rounding noise in them cycles
    // forever without improving the factorization.
    const double negligible = max_norm2 * 1e-28;

    for (int sweep = 0;; ++sweep) {
        if (sweep >= kMaxSweeps) throw NumericError("svd: Jacobi sweeps did not converge");
        std::size_t rotations = 0;
        for (std::size_t p = 0; p + 1 < c; ++p) {
            for (std::size_t q = p + 1; q < c; ++q) {
                const double alpha = norm2[p], beta = norm2[q];
                if (alpha <= negligible || beta <= negligible) continue;
                double gamma = 0.0;
                for (std::size_t i = 0; i < n; ++i) gamma += a(i, p) * a(i, q);
                if (gamma * gamma <= kOrthTol * kOrthTol * alpha * beta) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    a(i, p) = cs * ap - sn * aq;
                    a(i, q) = sn * ap + cs * aq;
                }
                for (std::size_t i = 0; i < c; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = cs * vp - sn * vq;
                    v(i, q) = sn * vp + cs * vq;
                }
                norm2[p] = std::max(alpha - t * gamma, 0.0);
                norm2[q] = std::max(beta + t * gamma, 0.0);
                ++rotations;
            }
        }
        if (rotations == 0) break;
    }

    std::vector<double> sigma(c);
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += a(i, j) * a(i, j);
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult r;
    r.singular_values.resize(c);
    r.left_vectors = RealMatrix(n, c);
    r.right_vectors = RealMatrix(c, c);
    for (std::size_t jj = 0; jj < c; ++jj) {
        const std::size_t j = order[jj];
        r.singular_values[jj] = sigma[j];
        if (sigma[j] > 0.0) {
            const double inv = 1.0 / sigma[j];
            for (std::size_t i = 0; i < n; ++i) r.left_vectors(i, jj) = a(i, j) * inv;
        } else {
            r.left_vectors(jj % n, jj) = 1.0;  // arbitrary unit vector; sigma = 0
        }
        for (std::size_t i = 0; i < c; ++i) r.right_vectors(i, jj) = v(i, j);
    }
    return r;
}

}  // namespace

SvdResult svd(const RealMatrix& m) {
    if (!m.all_finite()) throw NumericError("svd: input has NaN/Inf entries");
    if (m.rows() >= m.cols()) return jacobi_tall(m);
    SvdResult t = jacobi_tall(transpose(m));
    std::swap(t.left_vectors, t.right_vectors);
    return t;
}

}  // namespace nearfar
