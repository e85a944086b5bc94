#include "nearfar/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace nearfar {

bool RealMatrix::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
[[noreturn]] void dim_fail(const char* op, const RealMatrix& a, const RealMatrix& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}
}  // namespace

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
    if (a.cols() != b.rows()) dim_fail("matmul", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    RealMatrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.row_ptr(i);
        const double* ai = a.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b.row_ptr(p);
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

RealMatrix matmul_atb(const RealMatrix& a, const RealMatrix& b) {
    if (a.rows() != b.rows()) dim_fail("matmul_atb", a, b);
    const std::size_t n = a.rows(), d = a.cols(), m = b.cols();
    RealMatrix c(d, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        const double* bi = b.row_ptr(i);
        for (std::size_t p = 0; p < d; ++p) {
            const double aip = ai[p];
            double* cp = c.row_ptr(p);
            for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
        }
    }
    return c;
}

RealMatrix matmul_abt(const RealMatrix& a, const RealMatrix& b) {
    if (a.cols() != b.cols()) dim_fail("matmul_abt", a, b);
    const std::size_t n = a.rows(), d = a.cols(), m = b.rows();
    RealMatrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) ci[j] = dot({ai, d}, b.row(j));
    }
    return c;
}

RealMatrix row_softmax(const RealMatrix& m) {
    RealMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* src = m.row_ptr(i);
        double* dst = out.row_ptr(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols(); ++j) mx = std::max(mx, src[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < m.cols(); ++j) dst[j] *= inv;
    }
    return out;
}

RealMatrix transpose(const RealMatrix& m) {
    RealMatrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

RealMatrix add(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) dim_fail("add", a, b);
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    return c;
}

RealMatrix sub(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) dim_fail("sub", a, b);
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
    return c;
}

RealMatrix scaled(const RealMatrix& a, double s) {
    RealMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
    return c;
}

void axpy(RealMatrix& y, double s, const RealMatrix& x) {
    if (!y.same_shape(x)) dim_fail("axpy", y, x);
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += s * x.data()[i];
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double frobenius_norm(const RealMatrix& m) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
    return std::sqrt(s);
}

double max_abs(const RealMatrix& m) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s = std::max(s, std::abs(m.data()[i]));
    return s;
}

double max_abs_diff(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) dim_fail("max_abs_diff", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s = std::max(s, std::abs(a.data()[i] - b.data()[i]));
    return s;
}

}  // namespace nearfar
