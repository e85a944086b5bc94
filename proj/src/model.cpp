#include "nearfar/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nearfar/errors.hpp"

namespace nearfar {

namespace {
constexpr double kLnEps = 1e-5;
}

std::vector<CopyTaskSample> gen_copy_batch(Rng& rng, std::size_t batch, std::size_t max_len) {
    if (max_len < 4 || max_len % 2 != 0)
        throw ConfigError("gen_copy_batch: max_len must be even and >= 4");
    const std::size_t max_word = (max_len - 2) / 2;
    std::vector<CopyTaskSample> out;
    out.reserve(batch);
    for (std::size_t s = 0; s < batch; ++s) {
        const std::size_t m = 1 + rng.next_below(max_word);
        CopyTaskSample sample;
        sample.tokens.assign(2 * m + 2, kSeparator);
        for (std::size_t i = 0; i < m; ++i) {
            const int symbol = 1 + static_cast<int>(rng.next_below(10));
            sample.tokens[1 + i] = symbol;
            sample.tokens[m + 2 + i] = symbol;
        }
        out.push_back(std::move(sample));
    }
    return out;
}

std::string_view variant_token(AttentionVariant v) noexcept {
    switch (v) {
        case AttentionVariant::Softmax:
            return "softmax";
        case AttentionVariant::Linear:
            return "linear";
        case AttentionVariant::Band:
            return "band";
        case AttentionVariant::Fmm:
            return "fmm";
    }
    return "";
}

AttentionVariant parse_variant(std::string_view token) {
    if (token == "softmax") return AttentionVariant::Softmax;
    if (token == "linear") return AttentionVariant::Linear;
    if (token == "band") return AttentionVariant::Band;
    if (token == "fmm") return AttentionVariant::Fmm;
    throw ConfigError("unknown attention variant: '" + std::string(token) + "'");
}

void TrainConfig::validate() const {
    if (model_dim % heads != 0) throw ConfigError("model_dim must be divisible by heads");
    if (max_len < 4 || max_len % 2 != 0) throw ConfigError("max_len must be even and >= 4");
    if (layers == 0 || heads == 0 || model_dim == 0 || ffn_dim == 0 || batch == 0)
        throw ConfigError("layers/heads/dims/batch must be positive");
    if ((variant == AttentionVariant::Band || variant == AttentionVariant::Fmm) && !bandwidth)
        throw ConfigError("band/fmm variants need a bandwidth");
    if ((variant == AttentionVariant::Linear || variant == AttentionVariant::Fmm) &&
        feature_maps.empty())
        throw ConfigError("linear/fmm variants need feature maps");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
    kv.require_known_keys({"layers", "heads", "model_dim", "ffn_dim", "variant", "bandwidth",
                           "feature_maps", "w1_logit", "w2_logit", "lr", "lr_decay_step",
                           "lr_decay", "warmup_steps", "batch", "steps", "max_len", "seed"});
    TrainConfig cfg;
    cfg.layers = kv.get_u64_or("layers", cfg.layers);
    cfg.heads = kv.get_u64_or("heads", cfg.heads);
    cfg.model_dim = kv.get_u64_or("model_dim", cfg.model_dim);
    cfg.ffn_dim = kv.get_u64_or("ffn_dim", cfg.ffn_dim);
    cfg.variant = parse_variant(kv.get_or("variant", "softmax"));
    const std::string band = kv.get_or("bandwidth", "none");
    if (band != "none" && !band.empty())
        cfg.bandwidth = KeyValueConfig::parse_string("v = " + band).get_u64("v");
    cfg.feature_maps = FeatureMapSet::parse(kv.get_or("feature_maps", ""));
    cfg.w1_logit = kv.get_double_or("w1_logit", cfg.w1_logit);
    cfg.w2_logit = kv.get_double_or("w2_logit", cfg.w2_logit);
    cfg.lr = kv.get_double_or("lr", cfg.lr);
    cfg.lr_decay_step = kv.get_u64_or("lr_decay_step", cfg.lr_decay_step);
    cfg.lr_decay = kv.get_double_or("lr_decay", cfg.lr_decay);
    cfg.warmup_steps = kv.get_u64_or("warmup_steps", cfg.warmup_steps);
    cfg.batch = kv.get_u64_or("batch", cfg.batch);
    cfg.steps = kv.get_u64_or("steps", cfg.steps);
    cfg.max_len = kv.get_u64_or("max_len", cfg.max_len);
    cfg.seed = kv.get_u64_or("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

void TrainConfig::to_config(KeyValueConfig& kv) const {
    kv.set("layers", static_cast<std::uint64_t>(layers));
    kv.set("heads", static_cast<std::uint64_t>(heads));
    kv.set("model_dim", static_cast<std::uint64_t>(model_dim));
    kv.set("ffn_dim", static_cast<std::uint64_t>(ffn_dim));
    kv.set("variant", std::string(variant_token(variant)));
    kv.set("bandwidth", bandwidth ? std::to_string(*bandwidth) : std::string("none"));
    kv.set("feature_maps", feature_maps.to_string());
    kv.set("w1_logit", w1_logit);
    kv.set("w2_logit", w2_logit);
    kv.set("lr", lr);
    kv.set("lr_decay_step", static_cast<std::uint64_t>(lr_decay_step));
    kv.set("lr_decay", lr_decay);
    kv.set("warmup_steps", static_cast<std::uint64_t>(warmup_steps));
    kv.set("batch", static_cast<std::uint64_t>(batch));
    kv.set("steps", static_cast<std::uint64_t>(steps));
    kv.set("max_len", static_cast<std::uint64_t>(max_len));
    kv.set("seed", seed);
}

std::vector<std::pair<std::string, RealMatrix*>> ModelParams::registry() {
    std::vector<std::pair<std::string, RealMatrix*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerParams& lp = layers[l];
        out.emplace_back(p + "ln1_g", &lp.ln1_g);
        out.emplace_back(p + "ln1_b", &lp.ln1_b);
        out.emplace_back(p + "w_q", &lp.w_q);
        out.emplace_back(p + "w_k", &lp.w_k);
        out.emplace_back(p + "w_v", &lp.w_v);
        out.emplace_back(p + "w_o", &lp.w_o);
        out.emplace_back(p + "blend", &lp.blend);
        out.emplace_back(p + "ln2_g", &lp.ln2_g);
        out.emplace_back(p + "ln2_b", &lp.ln2_b);
        out.emplace_back(p + "ffn_w1", &lp.ffn_w1);
        out.emplace_back(p + "ffn_b1", &lp.ffn_b1);
        out.emplace_back(p + "ffn_w2", &lp.ffn_w2);
        out.emplace_back(p + "ffn_b2", &lp.ffn_b2);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    out.emplace_back("w_out", &w_out);
    return out;
}

std::vector<std::pair<std::string, const RealMatrix*>> ModelParams::registry() const {
    auto mutable_reg = const_cast<ModelParams*>(this)->registry();
    std::vector<std::pair<std::string, const RealMatrix*>> out;
    out.reserve(mutable_reg.size());
    for (auto& [name, ptr] : mutable_reg) out.emplace_back(name, ptr);
    return out;
}

ModelParams init_params(const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t dm = cfg.model_dim, ff = cfg.ffn_dim;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(dm));
    const double ffn2_scale = 1.0 / std::sqrt(static_cast<double>(ff));

    ModelParams p;
    p.cfg = cfg;
    p.tok_emb = rand_matrix(rng, kVocabSize, dm, 0.05);
    p.pos_emb = rand_matrix(rng, cfg.max_len, dm, 0.05);
    p.layers.resize(cfg.layers);
    for (LayerParams& lp : p.layers) {
        lp.ln1_g = RealMatrix(1, dm, 1.0);
        lp.ln1_b = RealMatrix(1, dm, 0.0);
        lp.w_q = rand_matrix(rng, dm, dm, w_scale);
        lp.w_k = rand_matrix(rng, dm, dm, w_scale);
        lp.w_v = rand_matrix(rng, dm, dm, w_scale);
        lp.w_o = rand_matrix(rng, dm, dm, w_scale);
        lp.blend = RealMatrix(1, 2);
        lp.blend(0, 0) = cfg.w1_logit;
        lp.blend(0, 1) = cfg.w2_logit;
        lp.ln2_g = RealMatrix(1, dm, 1.0);
        lp.ln2_b = RealMatrix(1, dm, 0.0);
        lp.ffn_w1 = rand_matrix(rng, ff, dm, w_scale);
        lp.ffn_b1 = RealMatrix(1, ff, 0.0);
        lp.ffn_w2 = rand_matrix(rng, dm, ff, ffn2_scale);
        lp.ffn_b2 = RealMatrix(1, dm, 0.0);
    }
    p.lnf_g = RealMatrix(1, dm, 1.0);
    p.lnf_b = RealMatrix(1, dm, 0.0);
    p.w_out = rand_matrix(rng, kVocabSize, dm, 0.05);
    return p;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for (auto& [name, tensor] : z.registry())
        std::fill(tensor->data(), tensor->data() + tensor->size(), 0.0);
    return z;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

RealMatrix layer_norm(const RealMatrix& x, const RealMatrix& g, const RealMatrix& b,
                      LayerNormCache& cache) {
    const std::size_t n = x.rows(), d = x.cols();
    cache.normalized = RealMatrix(n, d);
    cache.inv_std.assign(n, 0.0);
    RealMatrix out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row_ptr(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xi[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std[i] = inv;
        double* ni = cache.normalized.row_ptr(i);
        double* oi = out.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) {
            ni[j] = (xi[j] - mean) * inv;
            oi[j] = ni[j] * g(0, j) + b(0, j);
        }
    }
    return out;
}

// Backward of layer_norm; accumulates into dg/db and returns dx.
RealMatrix layer_norm_backward(const RealMatrix& dy, const LayerNormCache& cache,
                               const RealMatrix& g, RealMatrix& dg, RealMatrix& db) {
    const std::size_t n = dy.rows(), d = dy.cols();
    RealMatrix dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* dyi = dy.row_ptr(i);
        const double* ni = cache.normalized.row_ptr(i);
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dyi[j] * g(0, j);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * ni[j];
            dg(0, j) += dyi[j] * ni[j];
            db(0, j) += dyi[j];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const double inv = cache.inv_std[i];
        double* dxi = dx.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dyi[j] * g(0, j);
            dxi[j] = inv * (dxhat - mean_dxhat - ni[j] * mean_dxhat_xhat);
        }
    }
    return dx;
}

void add_row_bias(RealMatrix& x, const RealMatrix& b) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double* xi = x.row_ptr(i);
        for (std::size_t j = 0; j < x.cols(); ++j) xi[j] += b(0, j);
    }
}

RealMatrix slice_cols(const RealMatrix& x, std::size_t begin, std::size_t width) {
    RealMatrix out(x.rows(), width);
    for (std::size_t i = 0; i < x.rows(); ++i)
        std::memcpy(out.row_ptr(i), x.row_ptr(i) + begin, width * sizeof(double));
    return out;
}

void add_into_cols(RealMatrix& dst, const RealMatrix& src, std::size_t begin) {
    for (std::size_t i = 0; i < src.rows(); ++i) {
        double* d = dst.row_ptr(i) + begin;
        const double* s = src.row_ptr(i);
        for (std::size_t j = 0; j < src.cols(); ++j) d[j] += s[j];
    }
}

HeadState head_forward(const TrainConfig& cfg, const LayerParams& lp, const RealMatrix& q,
                       const RealMatrix& k, const RealMatrix& v) {
    const std::size_t n = q.rows();
    switch (cfg.variant) {
        case AttentionVariant::Softmax:
            return dense_attention_forward(q, k, v, true);
        case AttentionVariant::Linear:
            return far_field_forward(q, k, v, cfg.feature_maps, true);
        case AttentionVariant::Band: {
            const std::size_t bw = std::min(*cfg.bandwidth, n - 1);
            return near_field_forward(q, k, v, bw, true);
        }
        case AttentionVariant::Fmm: {
            AttentionConfig acfg;
            acfg.bandwidth = std::min(*cfg.bandwidth, n - 1);
            acfg.feature_maps = cfg.feature_maps;
            acfg.causal = true;
            acfg.blend.raw_w1 = lp.blend(0, 0);
            acfg.blend.raw_w2 = lp.blend(0, 1);
            return fmm_attention_forward(q, k, v, acfg);
        }
    }
    throw ConfigError("head_forward: unknown variant");
}

const RealMatrix& head_output(const HeadState& state) {
    return std::visit([](const auto& st) -> const RealMatrix& { return st.out; }, state);
}

// Backward through one head; returns the input grads and accumulates the
// blend-gate grads (Fmm only).
GradBundle head_backward(const HeadState& state, const RealMatrix& upstream) {
    if (const auto* dense = std::get_if<DenseAttentionState>(&state))
        return backward_dense_attention(*dense, upstream);
    if (const auto* near = std::get_if<NearFieldState>(&state))
        return backward_near_field(*near, upstream);
    if (const auto* far = std::get_if<FarFieldState>(&state))
        return backward_far_field(*far, upstream);
    return backward_blend(std::get<BlendState>(state), upstream);
}

}  // namespace

Tape forward_with_tape(const ModelParams& params, std::span<const int> tokens) {
    const TrainConfig& cfg = params.cfg;
    const std::size_t n = tokens.size(), dm = cfg.model_dim;
    const std::size_t hd = dm / cfg.heads;
    if (n == 0) throw ConfigError("forward: empty token sequence");
    if (n > cfg.max_len) throw ConfigError("forward: sequence longer than max_len");

    Tape tape;
    tape.tokens.assign(tokens.begin(), tokens.end());
    tape.emb = RealMatrix(n, dm);
    for (std::size_t t = 0; t < n; ++t) {
        const int tok = tokens[t];
        if (tok < 0 || tok >= kVocabSize) throw ConfigError("forward: token id out of range");
        const double* te = params.tok_emb.row_ptr(static_cast<std::size_t>(tok));
        const double* pe = params.pos_emb.row_ptr(t);
        double* e = tape.emb.row_ptr(t);
        for (std::size_t j = 0; j < dm; ++j) e[j] = te[j] + pe[j];
    }

    RealMatrix x = tape.emb;
    tape.layers.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const LayerParams& lp = params.layers[l];
        LayerTape& lt = tape.layers[l];
        lt.x_in = x;

        lt.ln1_out = layer_norm(x, lp.ln1_g, lp.ln1_b, lt.ln1);
        lt.q = matmul_abt(lt.ln1_out, lp.w_q);
        lt.k = matmul_abt(lt.ln1_out, lp.w_k);
        lt.v = matmul_abt(lt.ln1_out, lp.w_v);

        lt.attn_concat = RealMatrix(n, dm);
        lt.heads.reserve(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const std::size_t off = h * hd;
            HeadState state = head_forward(cfg, lp, slice_cols(lt.q, off, hd),
                                           slice_cols(lt.k, off, hd), slice_cols(lt.v, off, hd));
            add_into_cols(lt.attn_concat, head_output(state), off);
            lt.heads.push_back(std::move(state));
        }

        RealMatrix attn_proj = matmul_abt(lt.attn_concat, lp.w_o);
        lt.x_mid = add(x, attn_proj);

        lt.ln2_out = layer_norm(lt.x_mid, lp.ln2_g, lp.ln2_b, lt.ln2);
        lt.ffn_pre = matmul_abt(lt.ln2_out, lp.ffn_w1);
        add_row_bias(lt.ffn_pre, lp.ffn_b1);
        lt.ffn_act = lt.ffn_pre;
        for (std::size_t i = 0; i < lt.ffn_act.size(); ++i)
            if (lt.ffn_act.data()[i] < 0.0) lt.ffn_act.data()[i] = 0.0;
        RealMatrix ffn_out = matmul_abt(lt.ffn_act, lp.ffn_w2);
        add_row_bias(ffn_out, lp.ffn_b2);
        x = add(lt.x_mid, ffn_out);
    }

    tape.lnf_out = layer_norm(x, params.lnf_g, params.lnf_b, tape.lnf);
    tape.logits = matmul_abt(tape.lnf_out, params.w_out);
    if (!tape.logits.all_finite()) throw NumericError("forward: non-finite logits");
    return tape;
}

RealMatrix forward(const ModelParams& params, std::span<const int> tokens) {
    return forward_with_tape(params, tokens).logits;
}

LossResult copy_task_loss(const RealMatrix& logits, std::span<const int> tokens) {
    const std::size_t n = tokens.size();
    if (n < 4 || n % 2 != 0) throw ConfigError("copy_task_loss: malformed sample");
    const std::size_t m = (n - 2) / 2;

    LossResult res;
    res.d_logits = RealMatrix(logits.rows(), logits.cols());
    res.target_count = m;

    // Positions m+1 .. 2m predict the duplicated symbols at m+2 .. 2m+1.
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t t = m + 1; t <= 2 * m; ++t) {
        const int target = tokens[t + 1];
        const double* row = logits.row_ptr(t);
        double mx = row[0];
        for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(row[c] - mx);
        const double log_z = std::log(z) + mx;
        res.loss += (log_z - row[static_cast<std::size_t>(target)]) * inv_m;

        double* drow = res.d_logits.row_ptr(t);
        for (std::size_t c = 0; c < logits.cols(); ++c)
            drow[c] = std::exp(row[c] - log_z) * inv_m;
        drow[static_cast<std::size_t>(target)] -= inv_m;
    }
    return res;
}

void backward_sample(const ModelParams& params, const Tape& tape, const RealMatrix& d_logits,
                     ModelParams& grads) {
    const TrainConfig& cfg = params.cfg;
    const std::size_t n = tape.tokens.size(), dm = cfg.model_dim;
    const std::size_t hd = dm / cfg.heads;

    // Output head.
    RealMatrix d_lnf_out = matmul(d_logits, params.w_out);
    axpy(grads.w_out, 1.0, matmul_atb(d_logits, tape.lnf_out));
    RealMatrix dx = layer_norm_backward(d_lnf_out, tape.lnf, params.lnf_g, grads.lnf_g,
                                        grads.lnf_b);

    for (std::size_t l = cfg.layers; l-- > 0;) {
        const LayerParams& lp = params.layers[l];
        const LayerTape& lt = tape.layers[l];
        LayerParams& gl = grads.layers[l];

        // FFN block: x_out = x_mid + ffn_w2(relu(ffn_w1 ln2(x_mid) + b1)) + b2.
        RealMatrix d_act = matmul(dx, lp.ffn_w2);
        axpy(gl.ffn_w2, 1.0, matmul_atb(dx, lt.ffn_act));
        for (std::size_t i = 0; i < n; ++i) {
            const double* di = dx.row_ptr(i);
            for (std::size_t j = 0; j < dm; ++j) gl.ffn_b2(0, j) += di[j];
        }
        for (std::size_t i = 0; i < d_act.size(); ++i)
            if (lt.ffn_pre.data()[i] <= 0.0) d_act.data()[i] = 0.0;
        RealMatrix d_ln2_out = matmul(d_act, lp.ffn_w1);
        axpy(gl.ffn_w1, 1.0, matmul_atb(d_act, lt.ln2_out));
        for (std::size_t i = 0; i < n; ++i) {
            const double* di = d_act.row_ptr(i);
            for (std::size_t j = 0; j < cfg.ffn_dim; ++j) gl.ffn_b1(0, j) += di[j];
        }
        RealMatrix d_x_mid = layer_norm_backward(d_ln2_out, lt.ln2, lp.ln2_g, gl.ln2_g,
                                                 gl.ln2_b);
        axpy(d_x_mid, 1.0, dx);  // residual

        // Attention block: x_mid = x_in + w_o(concat(heads(ln1(x_in)))).
        RealMatrix d_attn_concat = matmul(d_x_mid, lp.w_o);
        axpy(gl.w_o, 1.0, matmul_atb(d_x_mid, lt.attn_concat));

        RealMatrix d_q(n, dm), d_k(n, dm), d_v(n, dm);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const std::size_t off = h * hd;
            GradBundle hb = head_backward(lt.heads[h], slice_cols(d_attn_concat, off, hd));
            add_into_cols(d_q, hb.d_q, off);
            add_into_cols(d_k, hb.d_k, off);
            add_into_cols(d_v, hb.d_v, off);
            gl.blend(0, 0) += hb.d_raw_w1;
            gl.blend(0, 1) += hb.d_raw_w2;
        }

        RealMatrix d_ln1_out = matmul(d_q, lp.w_q);
        axpy(gl.w_q, 1.0, matmul_atb(d_q, lt.ln1_out));
        axpy(d_ln1_out, 1.0, matmul(d_k, lp.w_k));
        axpy(gl.w_k, 1.0, matmul_atb(d_k, lt.ln1_out));
        axpy(d_ln1_out, 1.0, matmul(d_v, lp.w_v));
        axpy(gl.w_v, 1.0, matmul_atb(d_v, lt.ln1_out));

        RealMatrix d_x_in = layer_norm_backward(d_ln1_out, lt.ln1, lp.ln1_g, gl.ln1_g,
                                                gl.ln1_b);
        axpy(d_x_in, 1.0, d_x_mid);  // residual
        dx = std::move(d_x_in);
    }

    for (std::size_t t = 0; t < n; ++t) {
        const double* di = dx.row_ptr(t);
        double* dte = grads.tok_emb.row_ptr(static_cast<std::size_t>(tape.tokens[t]));
        double* dpe = grads.pos_emb.row_ptr(t);
        for (std::size_t j = 0; j < dm; ++j) {
            dte[j] += di[j];
            dpe[j] += di[j];
        }
    }
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    auto preg = params.registry();
    auto greg = grads.registry();

    if (state.m.empty()) {
        for (auto& [name, tensor] : preg) {
            state.m.emplace_back(tensor->rows(), tensor->cols());
            state.v.emplace_back(tensor->rows(), tensor->cols());
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));

    for (std::size_t idx = 0; idx < preg.size(); ++idx) {
        RealMatrix& p = *preg[idx].second;
        const RealMatrix& g = *greg[idx].second;
        RealMatrix& m = state.m[idx];
        RealMatrix& v = state.v[idx];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g.data()[i];
            m.data()[i] = beta1 * m.data()[i] + (1.0 - beta1) * gi;
            v.data()[i] = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
            const double mhat = m.data()[i] / bc1;
            const double vhat = v.data()[i] / bc2;
            p.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    TrainResult result;
    result.params = init_params(cfg, rng);
    AdamState adam;

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const std::vector<CopyTaskSample> batch = gen_copy_batch(rng, cfg.batch, cfg.max_len);

        ModelParams grads = zeros_like(result.params);
        double loss = 0.0;
        for (const CopyTaskSample& sample : batch) {
            Tape tape = forward_with_tape(result.params, sample.tokens);
            LossResult lr_res = copy_task_loss(tape.logits, sample.tokens);
            loss += lr_res.loss;
            // Batch-mean loss: scale each sample's upstream once.
            for (std::size_t i = 0; i < lr_res.d_logits.size(); ++i)
                lr_res.d_logits.data()[i] /= static_cast<double>(cfg.batch);
            backward_sample(result.params, tape, lr_res.d_logits, grads);
        }
        loss /= static_cast<double>(cfg.batch);
        if (!std::isfinite(loss))
            throw NumericError("train: loss diverged at step " + std::to_string(step));
        result.losses.push_back(loss);

        double lr = cfg.lr;
        if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
            lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
        if (step > cfg.lr_decay_step) lr *= cfg.lr_decay;
        adam_step(result.params, grads, adam, lr);
    }
    if (cfg.steps == 0) {
        // Step budget 0: report the initialization loss on one batch.
        const std::vector<CopyTaskSample> batch = gen_copy_batch(rng, cfg.batch, cfg.max_len);
        double loss = 0.0;
        for (const CopyTaskSample& sample : batch)
            loss += copy_task_loss(forward(result.params, sample.tokens), sample.tokens).loss;
        result.losses.push_back(loss / static_cast<double>(cfg.batch));
    }
    return result;
}

double model_fd_check(const TrainConfig& cfg, std::uint64_t seed, double h) {
    cfg.validate();
    Rng rng(seed);
    ModelParams params = init_params(cfg, rng);
    const std::vector<CopyTaskSample> batch = gen_copy_batch(rng, cfg.batch, cfg.max_len);

    const auto batch_loss = [&](const ModelParams& p) {
        double loss = 0.0;
        for (const CopyTaskSample& sample : batch)
            loss += copy_task_loss(forward(p, sample.tokens), sample.tokens).loss;
        return loss / static_cast<double>(batch.size());
    };

    ModelParams grads = zeros_like(params);
    for (const CopyTaskSample& sample : batch) {
        Tape tape = forward_with_tape(params, sample.tokens);
        LossResult lr = copy_task_loss(tape.logits, sample.tokens);
        for (std::size_t i = 0; i < lr.d_logits.size(); ++i)
            lr.d_logits.data()[i] /= static_cast<double>(batch.size());
        backward_sample(params, tape, lr.d_logits, grads);
    }

    std::vector<double> flat, analytic;
    for (const auto& [name, tensor] : params.registry())
        flat.insert(flat.end(), tensor->data(), tensor->data() + tensor->size());
    for (const auto& [name, tensor] : grads.registry())
        analytic.insert(analytic.end(), tensor->data(), tensor->data() + tensor->size());

    const auto f = [&](const std::vector<double>& p) {
        ModelParams candidate = params;
        std::size_t off = 0;
        for (auto& [name, tensor] : candidate.registry()) {
            std::copy(p.begin() + off, p.begin() + off + tensor->size(), tensor->data());
            off += tensor->size();
        }
        return batch_loss(candidate);
    };
    return fd_check(f, flat, analytic, h).max_rel_error;
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary. Layout:
//   magic "NFCKPT01" | u64 config_len | config text (flat key=value)
//   | u32 tensor_count | per tensor: u32 name_len, name, u64 rows, u64 cols,
//   rows*cols raw f64.
// ---------------------------------------------------------------------------

namespace {
template <class T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("save_checkpoint: cannot open " + path);
    out.write("NFCKPT01", 8);

    KeyValueConfig kv;
    params.cfg.to_config(kv);
    const std::string cfg_text = kv.to_string();
    write_pod<std::uint64_t>(out, cfg_text.size());
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    const auto reg = params.registry();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(reg.size()));
    for (const auto& [name, tensor] : reg) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint64_t>(out, tensor->rows());
        write_pod<std::uint64_t>(out, tensor->cols());
        out.write(reinterpret_cast<const char*>(tensor->data()),
                  static_cast<std::streamsize>(tensor->size() * sizeof(double)));
    }
    if (!out) throw ConfigError("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != "NFCKPT01")
        throw ConfigError("load_checkpoint: bad magic in " + path);

    const std::uint64_t cfg_len = read_pod<std::uint64_t>(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    const TrainConfig cfg = TrainConfig::from_config(KeyValueConfig::parse_string(cfg_text));

    Rng rng(cfg.seed);
    ModelParams params = init_params(cfg, rng);
    const std::uint32_t count = read_pod<std::uint32_t>(in);
    auto reg = params.registry();
    if (count != reg.size()) throw ConfigError("load_checkpoint: tensor count mismatch");
    for (auto& [expected_name, tensor] : reg) {
        const std::uint32_t name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint64_t rows = read_pod<std::uint64_t>(in);
        const std::uint64_t cols = read_pod<std::uint64_t>(in);
        if (name != expected_name || rows != tensor->rows() || cols != tensor->cols())
            throw ConfigError("load_checkpoint: tensor layout mismatch at " + name);
        in.read(reinterpret_cast<char*>(tensor->data()),
                static_cast<std::streamsize>(tensor->size() * sizeof(double)));
    }
    if (!in) throw ConfigError("load_checkpoint: truncated file " + path);
    return params;
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses,
                    std::string_view variant, std::uint64_t seed) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("write_loss_csv: cannot open " + path);
    out << "step,loss,variant,seed\n";
    out.precision(17);
    for (std::size_t i = 0; i < losses.size(); ++i)
        out << (i + 1) << ',' << losses[i] << ',' << variant << ',' << seed << '\n';
}

}  // namespace nearfar
