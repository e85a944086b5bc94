#include "nearfar/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nearfar/attention.hpp"
#include "nearfar/errors.hpp"
#include "nearfar/svd.hpp"

namespace nearfar {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Row softmax that treats -inf logits as excluded slots.
RealMatrix masked_row_softmax(const RealMatrix& logits) {
    RealMatrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = kNegInf;
        for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (logits(i, j) == kNegInf) continue;
            const double e = std::exp(logits(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        if (sum > 0.0) {
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j < logits.cols(); ++j) out(i, j) *= inv;
        }
    }
    return out;
}

RealMatrix scaled_logits(const RealMatrix& q, const RealMatrix& k_mat) {
    if (!q.same_shape(k_mat)) throw DimensionError("attention oracle: q and k shapes differ");
    return scaled(matmul_abt(q, k_mat), 1.0 / std::sqrt(static_cast<double>(q.cols())));
}
}  // namespace

DenseAttention dense_softmax_attention(const RealMatrix& q, const RealMatrix& k_mat,
                                       const RealMatrix& v, bool causal) {
    RealMatrix logits = scaled_logits(q, k_mat);
    if (causal)
        for (std::size_t i = 0; i < logits.rows(); ++i)
            for (std::size_t j = i + 1; j < logits.cols(); ++j) logits(i, j) = kNegInf;
    DenseAttention result;
    result.attn = masked_row_softmax(logits);
    result.out = matmul(result.attn, v);
    return result;
}

RealMatrix dense_banded_oracle(const RealMatrix& q, const RealMatrix& k_mat,
                               std::size_t bandwidth, bool causal) {
    RealMatrix logits = scaled_logits(q, k_mat);
    const std::size_t n = logits.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t dist = i > j ? i - j : j - i;
            if (dist > bandwidth || (causal && j > i)) logits(i, j) = kNegInf;
        }
    return masked_row_softmax(logits);
}

RealMatrix dense_lowrank_oracle(const RealMatrix& q, const RealMatrix& k_mat,
                                const FeatureMapSet& maps, bool causal) {
    if (!q.same_shape(k_mat)) throw DimensionError("dense_lowrank_oracle: q/k shapes differ");
    const std::size_t n = q.rows();
    RealMatrix total(n, n);
    for (const FeatureMapKind kind : maps) {
        const RealMatrix kernel = matmul_abt(apply(kind, q), apply(kind, k_mat));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t last = causal ? i : n - 1;
            double den = 0.0;
            for (std::size_t j = 0; j <= last; ++j) den += kernel(i, j);
            const double inv = 1.0 / std::max(den, kDenomFloor);
            for (std::size_t j = 0; j <= last; ++j) total(i, j) += kernel(i, j) * inv;
        }
    }
    return total;
}

RealMatrix dense_lowrank_unnormalized(const RealMatrix& q, const RealMatrix& k_mat,
                                      const FeatureMapSet& maps) {
    if (!q.same_shape(k_mat))
        throw DimensionError("dense_lowrank_unnormalized: q/k shapes differ");
    RealMatrix total(q.rows(), q.rows());
    for (const FeatureMapKind kind : maps)
        axpy(total, 1.0, matmul_abt(apply(kind, q), apply(kind, k_mat)));
    return total;
}

SeparatedKernelProblem::SeparatedKernelProblem(std::vector<double> targets_in,
                                               std::vector<double> sources_in, double center_in,
                                               double delta_in)
    : targets(std::move(targets_in)),
      sources(std::move(sources_in)),
      center(center_in),
      delta(delta_in) {
    if (!(delta > 0.0 && delta < 1.0))
        throw ConfigError("SeparatedKernelProblem: delta must be in (0, 1)");
    double max_source = 0.0;
    for (double k : sources) max_source = std::max(max_source, std::abs(k - center));
    for (double q : targets)
        if (max_source > delta * std::abs(q - center))
            throw ConfigError("SeparatedKernelProblem: separation |k_j - k*| <= delta|q_i - k*| violated");
}

double SeparatedKernelProblem::kernel_entry(std::size_t i, std::size_t j) const {
    const double s = targets[i] - sources[j];
    return 1.0 / (s * s);
}

RealMatrix SeparatedKernelProblem::dense_kernel() const {
    RealMatrix a(targets.size(), sources.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = 0; j < sources.size(); ++j) a(i, j) = kernel_entry(i, j);
    return a;
}

LowRankFactors lemma1_factorize(const SeparatedKernelProblem& prob, std::size_t p) {
    if (p < 1) throw ConfigError("lemma1_factorize: p must be >= 1");
    LowRankFactors f;
    f.p = p;
    f.u = RealMatrix(prob.targets.size(), p);
    f.v = RealMatrix(prob.sources.size(), p);

    for (std::size_t i = 0; i < prob.targets.size(); ++i) {
        const double c = prob.center - prob.targets[i];  // signed displacement
        if (c == 0.0) throw NumericError("lemma1_factorize: target coincides with center");
        const double g = 1.0 / (c * c);
        double pow_c = 1.0;
        for (std::size_t m = 0; m < p; ++m) {
            f.u(i, m) = g / pow_c;
            pow_c *= c;
        }
    }
    for (std::size_t j = 0; j < prob.sources.size(); ++j) {
        const double e = prob.sources[j] - prob.center;
        double pow_e = 1.0;
        double sign = 1.0;
        for (std::size_t m = 0; m < p; ++m) {
            // g(s) = s^-2 gives g^(m)(1)/m! = (-1)^m (m+1).
            f.v(j, m) = sign * static_cast<double>(m + 1) * pow_e;
            pow_e *= e;
            sign = -sign;
        }
    }
    return f;
}

namespace {
std::size_t count_above(const RealMatrix& m, double threshold) {
    if (m.empty()) return 0;
    const SvdResult s = svd(m);
    std::size_t count = 0;
    for (double sigma : s.singular_values)
        if (sigma > threshold) ++count;
    return count;
}
}  // namespace

std::size_t epsilon_rank(const RealMatrix& m, double eps) {
    if (!(eps > 0.0)) throw ConfigError("epsilon_rank: eps must be > 0");
    if (m.empty()) return 0;
    const SvdResult s = svd(m);
    const double sigma1 = s.singular_values.front();
    if (sigma1 == 0.0) return 0;
    std::size_t count = 0;
    for (double sigma : s.singular_values)
        if (sigma > eps * sigma1) ++count;
    return count;
}

std::size_t epsilon_rank_abs(const RealMatrix& m, double eps) {
    if (!(eps > 0.0)) throw ConfigError("epsilon_rank_abs: eps must be > 0");
    return count_above(m, eps);
}

}  // namespace nearfar
