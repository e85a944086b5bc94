#pragma once

#include <cmath>
#include <optional>

#include "nearfar/banded.hpp"
#include "nearfar/config.hpp"
#include "nearfar/feature_maps.hpp"
#include "nearfar/matrix.hpp"

namespace nearfar {

/// Floor applied to the far-field row normalizer. Positive maps keep the
/// normalizer well above this; with tanh in the set it can vanish or go
/// negative, and the floor keeps the division defined.
inline constexpr double kDenomFloor = 1e-8;

/// Learnable blend gates, stored as pre-sigmoid logits so the effective
/// weights stay in (0, 1).
struct BlendParams {
    double raw_w1 = -4.0;
    double raw_w2 = 4.0;

    double w1() const noexcept { return 1.0 / (1.0 + std::exp(-raw_w1)); }
    double w2() const noexcept { return 1.0 / (1.0 + std::exp(-raw_w2)); }
};

/// Full description of one attention layer: banded near field (nullopt
/// disables it; 0 = diagonal only), far-field feature maps (empty set
/// disables), causal flag, blend gates.
struct AttentionConfig {
    std::optional<std::size_t> bandwidth;
    FeatureMapSet feature_maps;
    bool causal = false;
    BlendParams blend;

    bool band_enabled() const noexcept { return bandwidth.has_value(); }
    bool far_enabled() const noexcept { return !feature_maps.empty(); }

    /// At least one component must be enabled.
    void validate() const;

    void to_config(KeyValueConfig& kv) const;
    static AttentionConfig from_config(const KeyValueConfig& kv);
};

/// Running prefix state for causal far-field attention: after absorbing
/// position i, s = sum_{j<=i} phi(k_j) v_j^T and z = sum_{j<=i} phi(k_j).
struct CausalState {
    RealMatrix s;           // D x Dv
    std::vector<double> z;  // D

    CausalState(std::size_t d, std::size_t dv) : s(d, dv), z(d, 0.0) {}
    void absorb(std::span<const double> phi_k_row, std::span<const double> v_row);
};

/// Banded softmax attention weights: entry (i,j) for |i-j| <= bandwidth is
/// softmax over row i's in-band logits q_i·k_j/sqrt(D). Never forms QK^T.
BandedMatrix build_near_field(const RealMatrix& q, const RealMatrix& k_mat,
                              std::size_t bandwidth);

/// D·V over stored bands. With causal=true, entries above the diagonal are
/// dropped and each row is renormalized over what remains (the diagonal is
/// always present, so no row empties out).
RealMatrix near_field_apply(const BandedMatrix& d, const RealMatrix& v, bool causal);

/// Sum over feature maps of row-normalized kernelized attention,
/// phi(Q)(phi(K)^T V) / max(phi(Q)·sum phi(k_j), floor), computed in
/// O(N·D·Dv·r). Causal variant runs the prefix recurrence.
RealMatrix far_field_apply(const RealMatrix& q, const RealMatrix& k_mat, const RealMatrix& v,
                           const FeatureMapSet& maps, bool causal);

/// w1·(near field) + w2·(far field); disabled components contribute zero.
RealMatrix fmm_attention(const RealMatrix& q, const RealMatrix& k_mat, const RealMatrix& v,
                         const AttentionConfig& cfg);

}  // namespace nearfar
