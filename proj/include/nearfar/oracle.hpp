#pragma once

#include <cstddef>
#include <vector>

#include "nearfar/feature_maps.hpp"
#include "nearfar/matrix.hpp"

namespace nearfar {

// Dense, obviously-correct reference paths. Quadratic in N by design; used
// for testing, analysis, and the softmax baseline — never on the fast path.

struct DenseAttention {
    RealMatrix attn;  // the row-stochastic N x N map, exposed for analysis
    RealMatrix out;   // attn · V
};

/// Full softmax attention softmax(QK^T/sqrt(D))·V, lower-triangular masked
/// when causal.
DenseAttention dense_softmax_attention(const RealMatrix& q, const RealMatrix& k_mat,
                                       const RealMatrix& v, bool causal);

/// Dense banded-attention weights: logits outside the band (and above the
/// diagonal when causal) are treated as -inf before the row softmax.
RealMatrix dense_banded_oracle(const RealMatrix& q, const RealMatrix& k_mat,
                               std::size_t bandwidth, bool causal);

/// Dense far-field weights: per map, the N x N kernel matrix
/// phi(q_i)·phi(k_j), row-normalized (over j <= i when causal, normalizer
/// floored), summed over maps.
RealMatrix dense_lowrank_oracle(const RealMatrix& q, const RealMatrix& k_mat,
                                const FeatureMapSet& maps, bool causal);

/// Same without row normalization: sum of phi(Q)·phi(K)^T kernel matrices.
RealMatrix dense_lowrank_unnormalized(const RealMatrix& q, const RealMatrix& k_mat,
                                      const FeatureMapSet& maps);

/// Scalar well-separated geometry for the inverse-square kernel
/// g(s) = 1/s²: sources cluster around `center` within delta times every
/// target's distance. Construction validates the separation condition.
struct SeparatedKernelProblem {
    std::vector<double> targets;  // q_i
    std::vector<double> sources;  // k_j
    double center;                // k*
    double delta;                 // in (0, 1)

    SeparatedKernelProblem(std::vector<double> targets_in, std::vector<double> sources_in,
                           double center_in, double delta_in);

    double kernel_entry(std::size_t i, std::size_t j) const;  // g(|q_i - k_j|)
    RealMatrix dense_kernel() const;
};

struct LowRankFactors {
    RealMatrix u;  // |targets| x p
    RealMatrix v;  // |sources| x p
    std::size_t p = 0;
};

/// Degree-p Taylor factorization of the separated kernel:
///   u(i,m) = g(|q_i - k*|) / (k* - q_i)^m,
///   v(j,m) = (g^(m)(1)/m!) (k_j - k*)^m,   m = 0..p-1,
/// so that u·v^T approximates the kernel matrix with O(delta^p) error.
/// The signed displacement power makes the expansion exact for targets on
/// either side of the center. Throws NumericError if any target sits at k*.
LowRankFactors lemma1_factorize(const SeparatedKernelProblem& prob, std::size_t p);

/// Number of singular values above eps·sigma_1 (relative threshold).
std::size_t epsilon_rank(const RealMatrix& m, double eps);

/// Number of singular values above eps (absolute threshold).
std::size_t epsilon_rank_abs(const RealMatrix& m, double eps);

}  // namespace nearfar
