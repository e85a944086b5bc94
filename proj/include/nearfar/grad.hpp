#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "nearfar/attention.hpp"
#include "nearfar/banded.hpp"
#include "nearfar/matrix.hpp"

namespace nearfar {

/// Gradients of a scalar loss w.r.t. one attention call's inputs and the
/// blend logits. Shapes mirror the forward inputs.
struct GradBundle {
    RealMatrix d_q, d_k, d_v;
    double d_raw_w1 = 0.0;
    double d_raw_w2 = 0.0;
};

// Forward ops that record what backward needs. Each saved state is one
// tape record; a model holds them in forward order and consumes them in
// exact reverse order.

struct NearFieldState {
    RealMatrix q, k, v;
    std::size_t bandwidth = 0;
    bool causal = false;
    BandedMatrix weights;  // effective row-stochastic weights (causally restricted)
    RealMatrix out;
};

NearFieldState near_field_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                  const RealMatrix& v, std::size_t bandwidth, bool causal);
GradBundle backward_near_field(const NearFieldState& st, const RealMatrix& upstream);

struct FarFieldState {
    RealMatrix q, k, v;
    FeatureMapSet maps;
    bool causal = false;
    std::vector<RealMatrix> phi_q, phi_k;        // per map
    std::vector<std::vector<double>> raw_denom;  // per map, per row, before the floor
    RealMatrix out;
};

FarFieldState far_field_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                const RealMatrix& v, const FeatureMapSet& maps, bool causal);
GradBundle backward_far_field(const FarFieldState& st, const RealMatrix& upstream);

struct BlendState {
    std::optional<NearFieldState> near;
    std::optional<FarFieldState> far;
    BlendParams blend;
    RealMatrix out;
};

BlendState fmm_attention_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                 const RealMatrix& v, const AttentionConfig& cfg);
GradBundle backward_blend(const BlendState& st, const RealMatrix& upstream);

/// Dense softmax attention with saved weights, for the quadratic baseline.
struct DenseAttentionState {
    RealMatrix q, k, v;
    bool causal = false;
    RealMatrix attn;
    RealMatrix out;
};

DenseAttentionState dense_attention_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                            const RealMatrix& v, bool causal);
GradBundle backward_dense_attention(const DenseAttentionState& st, const RealMatrix& upstream);

/// Central-difference check of an analytic gradient. Relative error uses
/// denominator max(|analytic|, |numeric|, 1e-8); h must lie in [1e-8, 1e-4].
struct FdReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

FdReport fd_check(const std::function<double(const std::vector<double>&)>& f,
                  std::vector<double> params, const std::vector<double>& analytic_grad,
                  double h);

/// FD-checks one blended attention configuration against a random linear
/// probe loss: gradients w.r.t. q, k, v and (optionally) the gate logits.
/// Returns the max relative error.
double attention_fd_check(const AttentionConfig& cfg, std::size_t n, std::size_t d,
                          std::size_t dv, std::uint64_t seed, double h, bool include_gates);

}  // namespace nearfar
