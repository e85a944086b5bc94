#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nearfar/attention.hpp"
#include "nearfar/config.hpp"
#include "nearfar/grad.hpp"
#include "nearfar/matrix.hpp"
#include "nearfar/rng.hpp"

namespace nearfar {

// ---------------------------------------------------------------------------
// Synthetic copy task: sequences of the form 0·w·0·w over symbols {1..10},
// separator 0. The model must reproduce w after the second separator.
// ---------------------------------------------------------------------------

inline constexpr int kVocabSize = 11;
inline constexpr int kSeparator = 0;

struct CopyTaskSample {
    std::vector<int> tokens;  // 0 w 0 w, length 2|w|+2
    std::size_t word_len() const noexcept { return (tokens.size() - 2) / 2; }
};

/// i.i.d. samples; per-sample word length uniform in [1, (max_len-2)/2].
std::vector<CopyTaskSample> gen_copy_batch(Rng& rng, std::size_t batch, std::size_t max_len);

// ---------------------------------------------------------------------------
// Model configuration and parameters
// ---------------------------------------------------------------------------

enum class AttentionVariant {
    Softmax,  // dense causal softmax (quadratic baseline)
    Linear,   // far field only, weight 1
    Band,     // near field only, weight 1
    Fmm,      // sigmoid-gated blend of near and far field
};

std::string_view variant_token(AttentionVariant v) noexcept;
AttentionVariant parse_variant(std::string_view token);

struct TrainConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t model_dim = 64;
    std::size_t ffn_dim = 128;

    AttentionVariant variant = AttentionVariant::Softmax;
    std::optional<std::size_t> bandwidth;  // Band / Fmm
    FeatureMapSet feature_maps;            // Linear / Fmm
    double w1_logit = -4.0;                // Fmm gate init
    double w2_logit = 4.0;

    double lr = 1e-3;
    std::size_t lr_decay_step = 3000;
    double lr_decay = 0.1;
    std::size_t warmup_steps = 100;
    std::size_t batch = 32;
    std::size_t steps = 3000;
    std::size_t max_len = 128;
    std::uint64_t seed = 1;

    void validate() const;
    static TrainConfig from_config(const KeyValueConfig& kv);
    void to_config(KeyValueConfig& kv) const;
};

struct LayerParams {
    RealMatrix ln1_g, ln1_b;  // 1 x dm
    RealMatrix w_q, w_k, w_v, w_o;  // dm x dm, applied as x·W^T
    RealMatrix blend;         // 1 x 2: raw logits (w1, w2), used by Fmm
    RealMatrix ln2_g, ln2_b;
    RealMatrix ffn_w1, ffn_b1;  // ffn x dm, 1 x ffn
    RealMatrix ffn_w2, ffn_b2;  // dm x ffn, 1 x dm
};

struct ModelParams {
    TrainConfig cfg;
    RealMatrix tok_emb;  // vocab x dm
    RealMatrix pos_emb;  // max_len x dm
    std::vector<LayerParams> layers;
    RealMatrix lnf_g, lnf_b;  // 1 x dm
    RealMatrix w_out;         // vocab x dm

    /// Stable registry of every tensor, in checkpoint/optimizer order.
    std::vector<std::pair<std::string, RealMatrix*>> registry();
    std::vector<std::pair<std::string, const RealMatrix*>> registry() const;
};

ModelParams init_params(const TrainConfig& cfg, Rng& rng);
ModelParams zeros_like(const ModelParams& params);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

using HeadState = std::variant<DenseAttentionState, NearFieldState, FarFieldState, BlendState>;

struct LayerNormCache {
    RealMatrix normalized;        // x-hat
    std::vector<double> inv_std;  // per row
};

struct LayerTape {
    RealMatrix x_in;
    LayerNormCache ln1;
    RealMatrix ln1_out;
    RealMatrix q, k, v;  // full-width projections
    std::vector<HeadState> heads;
    RealMatrix attn_concat;
    RealMatrix x_mid;  // x_in + attention output projection
    LayerNormCache ln2;
    RealMatrix ln2_out;
    RealMatrix ffn_pre;  // before ReLU
    RealMatrix ffn_act;  // after ReLU
};

/// Ordered forward records for one sample; backward consumes them in exact
/// reverse order.
struct Tape {
    std::vector<int> tokens;
    RealMatrix emb;
    std::vector<LayerTape> layers;
    LayerNormCache lnf;
    RealMatrix lnf_out;
    RealMatrix logits;  // positions x vocab
};

Tape forward_with_tape(const ModelParams& params, std::span<const int> tokens);
RealMatrix forward(const ModelParams& params, std::span<const int> tokens);

struct LossResult {
    double loss = 0.0;
    RealMatrix d_logits;
    std::size_t target_count = 0;
};

/// Mean cross-entropy over the duplicated-symbol positions only.
LossResult copy_task_loss(const RealMatrix& logits, std::span<const int> tokens);

void backward_sample(const ModelParams& params, const Tape& tape, const RealMatrix& d_logits,
                     ModelParams& grads);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<RealMatrix> m, v;
    std::size_t t = 0;
};

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr);

struct TrainResult {
    std::vector<double> losses;  // per-step batch loss
    ModelParams params;
};

/// Deterministic training loop: same config, bit-identical loss curve.
/// Throws NumericError (with the step index) if the loss diverges.
TrainResult train(const TrainConfig& cfg);

/// FD-checks the full-model loss gradient over every parameter coordinate
/// on one small batch; returns the max relative error. Use tiny dims.
double model_fd_check(const TrainConfig& cfg, std::uint64_t seed, double h);

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

void write_loss_csv(const std::string& path, const std::vector<double>& losses,
                    std::string_view variant, std::uint64_t seed);

}  // namespace nearfar
