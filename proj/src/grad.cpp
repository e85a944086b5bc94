#include "nearfar/grad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nearfar/errors.hpp"
#include "nearfar/oracle.hpp"
#include "nearfar/rng.hpp"

namespace nearfar {

NearFieldState near_field_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                  const RealMatrix& v, std::size_t bandwidth, bool causal) {
    if (!q.same_shape(k_mat))
        throw DimensionError("near_field_forward: q and k shapes differ");
    if (q.rows() != v.rows())
        throw DimensionError("near_field_forward: q and v row counts differ");
    const std::size_t n = q.rows(), d = q.cols();
    if (bandwidth >= n) throw ConfigError("near_field_forward: bandwidth must be < n");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    NearFieldState st;
    st.q = q;
    st.k = k_mat;
    st.v = v;
    st.bandwidth = bandwidth;
    st.causal = causal;
    st.weights = BandedMatrix(n, bandwidth);
    st.out = RealMatrix(n, v.cols());

    std::vector<double> logits(2 * bandwidth + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = st.weights.row_begin(i);
        const std::size_t hi = causal ? std::min(st.weights.row_end(i), i) : st.weights.row_end(i);
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
        double* oi = st.out.row_ptr(i);
        for (std::size_t j = lo; j <= hi; ++j) {
            const double w = logits[j - lo] * inv;
            st.weights.ref(i, j) = w;
            const double* vj = v.row_ptr(j);
            for (std::size_t b = 0; b < v.cols(); ++b) oi[b] += w * vj[b];
        }
    }
    return st;
}

GradBundle backward_near_field(const NearFieldState& st, const RealMatrix& upstream) {
    if (!upstream.same_shape(st.out))
        throw DimensionError("backward_near_field: upstream shape mismatch");
    const std::size_t n = st.q.rows(), d = st.q.cols(), dv = st.v.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    GradBundle g;
    g.d_q = RealMatrix(n, d);
    g.d_k = RealMatrix(n, d);
    g.d_v = RealMatrix(n, dv);

    std::vector<double> dw(2 * st.bandwidth + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = st.weights.row_begin(i);
        const std::size_t hi =
            st.causal ? std::min(st.weights.row_end(i), i) : st.weights.row_end(i);
        const double* gi = upstream.row_ptr(i);

        // dL/dw(i,j), then the softmax Jacobian within the row's window.
        double inner = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) {
            const double dwj = dot({gi, dv}, st.v.row(j));
            dw[j - lo] = dwj;
            inner += st.weights.at(i, j) * dwj;
        }
        const double* qi = st.q.row_ptr(i);
        double* dqi = g.d_q.row_ptr(i);
        for (std::size_t j = lo; j <= hi; ++j) {
            const double w = st.weights.at(i, j);
            const double dlogit = w * (dw[j - lo] - inner) * scale;
            const double* kj = st.k.row_ptr(j);
            double* dkj = g.d_k.row_ptr(j);
            for (std::size_t a = 0; a < d; ++a) {
                dqi[a] += dlogit * kj[a];
                dkj[a] += dlogit * qi[a];
            }
            double* dvj = g.d_v.row_ptr(j);
            for (std::size_t b = 0; b < dv; ++b) dvj[b] += w * gi[b];
        }
    }
    return g;
}

namespace {

// One feature map's forward contribution plus the state backward needs.
void far_forward_one(const RealMatrix& phi_q, const RealMatrix& phi_k, const RealMatrix& v,
                     bool causal, RealMatrix& out, std::vector<double>& raw_denom) {
    const std::size_t n = v.rows(), d = phi_q.cols(), dv = v.cols();
    raw_denom.assign(n, 0.0);
    std::vector<double> num(dv);

    if (causal) {
        CausalState state(d, dv);
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
            raw_denom[i] = den;
            const double inv = 1.0 / std::max(den, kDenomFloor);
            double* oi = out.row_ptr(i);
            for (std::size_t b = 0; b < dv; ++b) oi[b] += num[b] * inv;
        }
        return;
    }

    const RealMatrix s = matmul_atb(phi_k, v);
    std::vector<double> z(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double* pk = phi_k.row_ptr(j);
        for (std::size_t a = 0; a < d; ++a) z[a] += pk[a];
    }
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
        raw_denom[i] = den;
        const double inv = 1.0 / std::max(den, kDenomFloor);
        double* oi = out.row_ptr(i);
        for (std::size_t b = 0; b < dv; ++b) oi[b] += num[b] * inv;
    }
}

// Backward through one map's normalized kernel attention. Accumulates
// d_phi_q/d_phi_k (feature-space gradients) and d_v.
void far_backward_one(const RealMatrix& phi_q, const RealMatrix& phi_k, const RealMatrix& v,
                      bool causal, const std::vector<double>& raw_denom,
                      const RealMatrix& upstream, RealMatrix& d_phi_q, RealMatrix& d_phi_k,
                      RealMatrix& d_v) {
    const std::size_t n = v.rows(), d = phi_q.cols(), dv = v.cols();

    // Per-row scalars: 1/denom (after floor) and the denominator-branch
    // weight, zero where the floor clamped.
    std::vector<double> inv_den(n), gd(n);

    if (!causal) {
        const RealMatrix s = matmul_atb(phi_k, v);
        std::vector<double> z(d, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double* pk = phi_k.row_ptr(j);
            for (std::size_t a = 0; a < d; ++a) z[a] += pk[a];
        }

        RealMatrix d_s(d, dv);
        std::vector<double> d_z(d, 0.0), num(dv);
        for (std::size_t i = 0; i < n; ++i) {
            const double* pq = phi_q.row_ptr(i);
            const double* gi = upstream.row_ptr(i);
            const double den = std::max(raw_denom[i], kDenomFloor);
            const double inv = 1.0 / den;
            inv_den[i] = inv;

            std::fill(num.begin(), num.end(), 0.0);
            for (std::size_t a = 0; a < d; ++a) {
                const double f = pq[a];
                const double* srow = s.row_ptr(a);
                for (std::size_t b = 0; b < dv; ++b) num[b] += f * srow[b];
            }
            double gdot = 0.0;
            for (std::size_t b = 0; b < dv; ++b) gdot += gi[b] * num[b];
            gd[i] = raw_denom[i] > kDenomFloor ? -gdot * inv * inv : 0.0;

            double* dpq = d_phi_q.row_ptr(i);
            for (std::size_t a = 0; a < d; ++a) {
                const double* srow = s.row_ptr(a);
                double acc = 0.0;
                for (std::size_t b = 0; b < dv; ++b) acc += srow[b] * gi[b];
                dpq[a] += acc * inv + gd[i] * z[a];
                double* dsrow = d_s.row_ptr(a);
                const double fq = pq[a] * inv;
                for (std::size_t b = 0; b < dv; ++b) dsrow[b] += fq * gi[b];
                d_z[a] += gd[i] * pq[a];
            }
        }

        for (std::size_t j = 0; j < n; ++j) {
            const double* pk = phi_k.row_ptr(j);
            const double* vj = v.row_ptr(j);
            double* dpk = d_phi_k.row_ptr(j);
            double* dvj = d_v.row_ptr(j);
            for (std::size_t a = 0; a < d; ++a) {
                const double* dsrow = d_s.row_ptr(a);
                double acc = 0.0;
                for (std::size_t b = 0; b < dv; ++b) {
                    acc += dsrow[b] * vj[b];
                    dvj[b] += pk[a] * dsrow[b];
                }
                dpk[a] += acc + d_z[a];
            }
        }
        return;
    }

    // Causal: pass 1 (forward direction) rebuilds the prefix state for the
    // query-side gradients; pass 2 (reverse) streams the suffix
    // accumulators for the key/value-side gradients.
    CausalState state(d, dv);
    std::vector<double> num(dv);
    for (std::size_t i = 0; i < n; ++i) {
        state.absorb(phi_k.row(i), v.row(i));
        const double* pq = phi_q.row_ptr(i);
        const double* gi = upstream.row_ptr(i);
        const double den = std::max(raw_denom[i], kDenomFloor);
        const double inv = 1.0 / den;
        inv_den[i] = inv;

        std::fill(num.begin(), num.end(), 0.0);
        for (std::size_t a = 0; a < d; ++a) {
            const double f = pq[a];
            const double* srow = state.s.row_ptr(a);
            for (std::size_t b = 0; b < dv; ++b) num[b] += f * srow[b];
        }
        double gdot = 0.0;
        for (std::size_t b = 0; b < dv; ++b) gdot += gi[b] * num[b];
        gd[i] = raw_denom[i] > kDenomFloor ? -gdot * inv * inv : 0.0;

        double* dpq = d_phi_q.row_ptr(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double* srow = state.s.row_ptr(a);
            double acc = 0.0;
            for (std::size_t b = 0; b < dv; ++b) acc += srow[b] * gi[b];
            dpq[a] += acc * inv + gd[i] * state.z[a];
        }
    }

    RealMatrix suffix_s(d, dv);         // sum_{i>=j} phi_q_i (g_i/den_i)^T
    std::vector<double> suffix_z(d, 0.0);  // sum_{i>=j} gd_i phi_q_i
    for (std::size_t jj = n; jj-- > 0;) {
        const double* pq = phi_q.row_ptr(jj);
        const double* gi = upstream.row_ptr(jj);
        const double inv = inv_den[jj];
        for (std::size_t a = 0; a < d; ++a) {
            const double fq = pq[a] * inv;
            double* srow = suffix_s.row_ptr(a);
            for (std::size_t b = 0; b < dv; ++b) srow[b] += fq * gi[b];
            suffix_z[a] += gd[jj] * pq[a];
        }

        const double* pk = phi_k.row_ptr(jj);
        const double* vj = v.row_ptr(jj);
        double* dpk = d_phi_k.row_ptr(jj);
        double* dvj = d_v.row_ptr(jj);
        for (std::size_t a = 0; a < d; ++a) {
            const double* srow = suffix_s.row_ptr(a);
            double acc = 0.0;
            for (std::size_t b = 0; b < dv; ++b) {
                acc += srow[b] * vj[b];
                dvj[b] += pk[a] * srow[b];
            }
            dpk[a] += acc + suffix_z[a];
        }
    }
}

}  // namespace

FarFieldState far_field_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                const RealMatrix& v, const FeatureMapSet& maps, bool causal) {
    if (!q.same_shape(k_mat))
        throw DimensionError("far_field_forward: q and k shapes differ");
    if (q.rows() != v.rows())
        throw DimensionError("far_field_forward: q and v row counts differ");
    if (maps.empty()) throw ConfigError("far_field_forward: feature map set is empty");

    FarFieldState st;
    st.q = q;
    st.k = k_mat;
    st.v = v;
    st.maps = maps;
    st.causal = causal;
    st.out = RealMatrix(v.rows(), v.cols());
    st.raw_denom.resize(maps.size());
    for (std::size_t l = 0; l < maps.size(); ++l) {
        st.phi_q.push_back(apply(maps[l], q));
        st.phi_k.push_back(apply(maps[l], k_mat));
        far_forward_one(st.phi_q[l], st.phi_k[l], v, causal, st.out, st.raw_denom[l]);
    }
    return st;
}

GradBundle backward_far_field(const FarFieldState& st, const RealMatrix& upstream) {
    if (!upstream.same_shape(st.out))
        throw DimensionError("backward_far_field: upstream shape mismatch");
    const std::size_t n = st.q.rows(), d = st.q.cols(), dv = st.v.cols();

    GradBundle g;
    g.d_q = RealMatrix(n, d);
    g.d_k = RealMatrix(n, d);
    g.d_v = RealMatrix(n, dv);

    for (std::size_t l = 0; l < st.maps.size(); ++l) {
        RealMatrix d_phi_q(n, d), d_phi_k(n, d);
        far_backward_one(st.phi_q[l], st.phi_k[l], st.v, st.causal, st.raw_denom[l], upstream,
                         d_phi_q, d_phi_k, g.d_v);
        const RealMatrix dq_map = apply_derivative(st.maps[l], st.q);
        const RealMatrix dk_map = apply_derivative(st.maps[l], st.k);
        for (std::size_t i = 0; i < n * d; ++i) {
            g.d_q.data()[i] += d_phi_q.data()[i] * dq_map.data()[i];
            g.d_k.data()[i] += d_phi_k.data()[i] * dk_map.data()[i];
        }
    }
    return g;
}

BlendState fmm_attention_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                 const RealMatrix& v, const AttentionConfig& cfg) {
    cfg.validate();
    BlendState st;
    st.blend = cfg.blend;
    st.out = RealMatrix(v.rows(), v.cols());
    if (cfg.band_enabled()) {
        st.near = near_field_forward(q, k_mat, v, *cfg.bandwidth, cfg.causal);
        axpy(st.out, cfg.blend.w1(), st.near->out);
    }
    if (cfg.far_enabled()) {
        st.far = far_field_forward(q, k_mat, v, cfg.feature_maps, cfg.causal);
        axpy(st.out, cfg.blend.w2(), st.far->out);
    }
    return st;
}

GradBundle backward_blend(const BlendState& st, const RealMatrix& upstream) {
    if (!upstream.same_shape(st.out))
        throw DimensionError("backward_blend: upstream shape mismatch");

    GradBundle g;
    const auto ensure_shapes = [&](const RealMatrix& q, const RealMatrix& v) {
        if (g.d_q.empty()) {
            g.d_q = RealMatrix(q.rows(), q.cols());
            g.d_k = RealMatrix(q.rows(), q.cols());
            g.d_v = RealMatrix(v.rows(), v.cols());
        }
    };

    if (st.near) {
        const double w1 = st.blend.w1();
        GradBundle gn = backward_near_field(*st.near, scaled(upstream, w1));
        ensure_shapes(st.near->q, st.near->v);
        axpy(g.d_q, 1.0, gn.d_q);
        axpy(g.d_k, 1.0, gn.d_k);
        axpy(g.d_v, 1.0, gn.d_v);
        double inner = 0.0;
        for (std::size_t i = 0; i < upstream.size(); ++i)
            inner += upstream.data()[i] * st.near->out.data()[i];
        g.d_raw_w1 = inner * w1 * (1.0 - w1);
    }
    if (st.far) {
        const double w2 = st.blend.w2();
        GradBundle gf = backward_far_field(*st.far, scaled(upstream, w2));
        ensure_shapes(st.far->q, st.far->v);
        axpy(g.d_q, 1.0, gf.d_q);
        axpy(g.d_k, 1.0, gf.d_k);
        axpy(g.d_v, 1.0, gf.d_v);
        double inner = 0.0;
        for (std::size_t i = 0; i < upstream.size(); ++i)
            inner += upstream.data()[i] * st.far->out.data()[i];
        g.d_raw_w2 = inner * w2 * (1.0 - w2);
    }
    return g;
}

DenseAttentionState dense_attention_forward(const RealMatrix& q, const RealMatrix& k_mat,
                                            const RealMatrix& v, bool causal) {
    DenseAttentionState st;
    st.q = q;
    st.k = k_mat;
    st.v = v;
    st.causal = causal;
    DenseAttention da = dense_softmax_attention(q, k_mat, v, causal);
    st.attn = std::move(da.attn);
    st.out = std::move(da.out);
    return st;
}

GradBundle backward_dense_attention(const DenseAttentionState& st, const RealMatrix& upstream) {
    if (!upstream.same_shape(st.out))
        throw DimensionError("backward_dense_attention: upstream shape mismatch");
    const std::size_t n = st.q.rows(), d = st.q.cols(), dv = st.v.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    GradBundle g;
    g.d_q = RealMatrix(n, d);
    g.d_k = RealMatrix(n, d);
    g.d_v = RealMatrix(n, dv);

    std::vector<double> dattn(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t last = st.causal ? i : n - 1;
        const double* gi = upstream.row_ptr(i);

        double inner = 0.0;
        for (std::size_t j = 0; j <= last; ++j) {
            const double da = dot({gi, dv}, st.v.row(j));
            dattn[j] = da;
            inner += st.attn(i, j) * da;
        }
        const double* qi = st.q.row_ptr(i);
        double* dqi = g.d_q.row_ptr(i);
        for (std::size_t j = 0; j <= last; ++j) {
            const double a = st.attn(i, j);
            const double dlogit = a * (dattn[j] - inner) * scale;
            const double* kj = st.k.row_ptr(j);
            double* dkj = g.d_k.row_ptr(j);
            for (std::size_t c = 0; c < d; ++c) {
                dqi[c] += dlogit * kj[c];
                dkj[c] += dlogit * qi[c];
            }
            double* dvj = g.d_v.row_ptr(j);
            for (std::size_t b = 0; b < dv; ++b) dvj[b] += a * gi[b];
        }
    }
    return g;
}

double attention_fd_check(const AttentionConfig& cfg, std::size_t n, std::size_t d,
                          std::size_t dv, std::uint64_t seed, double h, bool include_gates) {
    Rng rng(seed);
    const RealMatrix q = rand_matrix(rng, n, d, 1.0);
    const RealMatrix k = rand_matrix(rng, n, d, 1.0);
    const RealMatrix v = rand_matrix(rng, n, dv, 1.0);
    const RealMatrix probe = rand_matrix(rng, n, dv, 1.0);

    const auto probe_loss = [&probe](const RealMatrix& out) {
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += probe.data()[i] * out.data()[i];
        return loss;
    };

    BlendState st = fmm_attention_forward(q, k, v, cfg);
    GradBundle g = backward_blend(st, probe);

    std::vector<double> params, analytic;
    const auto push = [](std::vector<double>& dst, const RealMatrix& m) {
        dst.insert(dst.end(), m.data(), m.data() + m.size());
    };
    push(params, q);
    push(params, k);
    push(params, v);
    push(analytic, g.d_q);
    push(analytic, g.d_k);
    push(analytic, g.d_v);
    if (include_gates) {
        params.push_back(cfg.blend.raw_w1);
        params.push_back(cfg.blend.raw_w2);
        analytic.push_back(g.d_raw_w1);
        analytic.push_back(g.d_raw_w2);
    }

    const auto f = [&](const std::vector<double>& p) {
        AttentionConfig c = cfg;
        RealMatrix qq(n, d), kk(n, d), vv(n, dv);
        std::size_t off = 0;
        std::copy(p.begin(), p.begin() + n * d, qq.data());
        off += n * d;
        std::copy(p.begin() + off, p.begin() + off + n * d, kk.data());
        off += n * d;
        std::copy(p.begin() + off, p.begin() + off + n * dv, vv.data());
        off += n * dv;
        if (include_gates) {
            c.blend.raw_w1 = p[off];
            c.blend.raw_w2 = p[off + 1];
        }
        return probe_loss(fmm_attention_forward(qq, kk, vv, c).out);
    };
    return fd_check(f, params, analytic, h).max_rel_error;
}

FdReport fd_check(const std::function<double(const std::vector<double>&)>& f,
                  std::vector<double> params, const std::vector<double>& analytic_grad,
                  double h) {
    if (!(h >= 1e-8 && h <= 1e-4)) throw ConfigError("fd_check: h must be in [1e-8, 1e-4]");
    if (params.size() != analytic_grad.size())
        throw DimensionError("fd_check: gradient length mismatch");

    FdReport report;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double fp = f(params);
        params[i] = saved - h;
        const double fm = f(params);
        params[i] = saved;

        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = analytic_grad[i];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

}  // namespace nearfar
