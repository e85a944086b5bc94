#include "nearfar/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace nearfar {

void AttentionConfig::validate() const {
    if (!band_enabled() && !far_enabled())
        throw ConfigError("AttentionConfig: need a band and/or at least one feature map");
}

void AttentionConfig::to_config(KeyValueConfig& kv) const {
    kv.set("bandwidth", band_enabled() ? std::to_string(*bandwidth) : std::string("none"));
    kv.set("feature_maps", feature_maps.to_string());
    kv.set("causal", causal);
    kv.set("w1_logit", blend.raw_w1);
    kv.set("w2_logit", blend.raw_w2);
}

AttentionConfig AttentionConfig::from_config(const KeyValueConfig& kv) {
    AttentionConfig cfg;
    const std::string band = kv.get_or("bandwidth", "none");
    if (band != "none") cfg.bandwidth = KeyValueConfig::parse_string("v = " + band).get_u64("v");
    cfg.feature_maps = FeatureMapSet::parse(kv.get_or("feature_maps", ""));
    cfg.causal = kv.get_bool_or("causal", false);
    cfg.blend.raw_w1 = kv.get_double_or("w1_logit", -4.0);
    cfg.blend.raw_w2 = kv.get_double_or("w2_logit", 4.0);
    cfg.validate();
    return cfg;
}

void CausalState::absorb(std::span<const double> phi_k_row, std::span<const double> v_row) {
    const std::size_t d = z.size(), dv = v_row.size();
    for (std::size_t a = 0; a < d; ++a) {
        const double f = phi_k_row[a];
        z[a] += f;
        double* srow = s.row_ptr(a);
        for (std::size_t b = 0; b < dv; ++b) srow[b] += f * v_row[b];
    }
}

BandedMatrix build_near_field(const RealMatrix& q, const RealMatrix& k_mat,
                              std::size_t bandwidth) {
    if (!q.same_shape(k_mat))
        throw DimensionError("build_near_field: q and k shapes differ");
    const std::size_t n = q.rows(), d = q.cols();
    if (bandwidth >= n)
        throw ConfigError("build_near_field: bandwidth " + std::to_string(bandwidth) +
                          " must be < sequence length " + std::to_string(n));
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    BandedMatrix out(n, bandwidth);
    std::vector<double> logits(2 * bandwidth + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = out.row_begin(i), hi = out.row_end(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = lo; j <= hi; ++j) {
            const double l = dot(q.row(i), k_mat.row(j)) * scale;
            logits[j - lo] = l;
            mx = std::max(mx, l);
        }
        double sum = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) {
            const double e = std::exp(logits[j - lo] - mx);
            logits[j - lo] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = lo; j <= hi; ++j) out.ref(i, j) = logits[j - lo] * inv;
    }
    return out;
}

RealMatrix near_field_apply(const BandedMatrix& d, const RealMatrix& v, bool causal) {
    if (d.n() != v.rows())
        throw DimensionError("near_field_apply: banded size and v rows differ");
    const std::size_t n = d.n(), dv = v.cols();
    RealMatrix out(n, dv);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = d.row_begin(i);
        const std::size_t hi = causal ? std::min(d.row_end(i), i) : d.row_end(i);
        double w_sum = 0.0;
        double* oi = out.row_ptr(i);
        for (std::size_t j = lo; j <= hi; ++j) {
            const double w = d.at(i, j);
            w_sum += w;
            const double* vj = v.row_ptr(j);
            for (std::size_t b = 0; b < dv; ++b) oi[b] += w * vj[b];
        }
        if (causal && w_sum > 0.0) {
            const double inv = 1.0 / w_sum;
            for (std::size_t b = 0; b < dv; ++b) oi[b] *= inv;
        }
    }
    return out;
}

namespace {

void far_field_accumulate_one(const RealMatrix& phi_q, const RealMatrix& phi_k,
                              const RealMatrix& v, bool causal, RealMatrix& out) {
    const std::size_t n = v.rows(), d = phi_q.cols(), dv = v.cols();
    if (causal) {
        CausalState state(d, dv);
        std::vector<double> num(dv);
        for (std::size_t i = 0; i < n; ++i) {
            state.absorb(phi_k.row(i), v.row(i));
            const double* pq = phi_q.row_ptr(i);
            std::fill(num.begin(), num.end(), 0.0);
            double den = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double f = pq[a];
                den += f * state.z[a];
                const double* srow = state.s.row_ptr(a);
                for (std::size_t b = 0; b < dv; ++b) num[b] += f * srow[b];
            }
            const double inv = 1.0 / std::max(den, kDenomFloor);
            double* oi = out.row_ptr(i);
            for (std::size_t b = 0; b < dv; ++b) oi[b] += num[b] * inv;
        }
        return;
    }

    const RealMatrix s = matmul_atb(phi_k, v);  // D x Dv
    std::vector<double> z(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double* pk = phi_k.row_ptr(j);
        for (std::size_t a = 0; a < d; ++a) z[a] += pk[a];
    }
    std::vector<double> num(dv);
    for (std::size_t i = 0; i < n; ++i) {
        const double* pq = phi_q.row_ptr(i);
        std::fill(num.begin(), num.end(), 0.0);
        double den = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double f = pq[a];
            den += f * z[a];
            const double* srow = s.row_ptr(a);
            for (std::size_t b = 0; b < dv; ++b) num[b] += f * srow[b];
        }
        const double inv = 1.0 / std::max(den, kDenomFloor);
        double* oi = out.row_ptr(i);
        for (std::size_t b = 0; b < dv; ++b) oi[b] += num[b] * inv;
    }
}

}  // namespace

RealMatrix far_field_apply(const RealMatrix& q, const RealMatrix& k_mat, const RealMatrix& v,
                           const FeatureMapSet& maps, bool causal) {
    if (!q.same_shape(k_mat))
        throw DimensionError("far_field_apply: q and k shapes differ");
    if (q.rows() != v.rows())
        throw DimensionError("far_field_apply: q and v row counts differ");
    if (maps.empty()) throw ConfigError("far_field_apply: feature map set is empty");
    if (!q.all_finite() || !k_mat.all_finite() || !v.all_finite())
        throw NumericError("far_field_apply: NaN/Inf in inputs");

    RealMatrix out(v.rows(), v.cols());
    for (const FeatureMapKind kind : maps) {
        const RealMatrix phi_q = apply(kind, q);
        const RealMatrix phi_k = apply(kind, k_mat);
        far_field_accumulate_one(phi_q, phi_k, v, causal, out);
    }
    return out;
}

RealMatrix fmm_attention(const RealMatrix& q, const RealMatrix& k_mat, const RealMatrix& v,
                         const AttentionConfig& cfg) {
    cfg.validate();
    RealMatrix out(v.rows(), v.cols());
    if (cfg.band_enabled()) {
        const BandedMatrix d = build_near_field(q, k_mat, *cfg.bandwidth);
        axpy(out, cfg.blend.w1(), near_field_apply(d, v, cfg.causal));
    }
    if (cfg.far_enabled())
        axpy(out, cfg.blend.w2(), far_field_apply(q, k_mat, v, cfg.feature_maps, cfg.causal));
    return out;
}

}  // namespace nearfar
