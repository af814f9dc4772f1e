#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowsim/rng.hpp"
#include "flowsim/tokenizer.hpp"

namespace flowsim {

// Decoder-only transformer over context tuples. Input embedding is tabular:
// one table per tuple feature, concatenated and linearly projected into the
// residual stream. Pre-norm RMSNorm blocks, rotary position encoding on
// q/k, grouped-query attention, SiLU MLP at 4x hidden, zero-initialized
// output head over the trade-token vocabulary. All math in double precision,
// single-threaded, fully deterministic.
struct ModelConfig {
    int vocab_trade = 16384;
    int n_price_levels = 32;
    int n_liquidity = 3;
    int n_scope = 2;
    int emb_trade = 48;
    int emb_price_level = 8;
    int emb_liquidity = 4;
    int emb_scope = 4;
    int hidden = 64;
    int layers = 2;
    int heads = 4;
    int kv_heads = 2;
    int context = 128;
    double rope_base = 10000.0;
    bool rope_enabled = true;

    int concat_dim() const { return emb_trade + emb_price_level + emb_liquidity + emb_scope; }
    int head_dim() const { return hidden / heads; }
    int kv_dim() const { return kv_heads * head_dim(); }
    int mlp_dim() const { return 4 * hidden; }
    void validate() const;  // throws Usage BadModelConfig
};

struct ParamLayout {
    struct Layer {
        std::size_t attn_norm, wq, wk, wv, wo, mlp_norm, w_up, w_down;
    };
    std::size_t emb_trade = 0, emb_price_level = 0, emb_liquidity = 0, emb_scope = 0;
    std::size_t input_proj = 0;
    std::vector<Layer> layers;
    std::size_t final_norm = 0, head = 0;
    std::size_t total = 0;

    static ParamLayout build(const ModelConfig& cfg);
};

struct Model {
    ModelConfig config;
    ParamLayout layout;
    std::vector<double> params;
};

// Zero output head => exactly uniform logits at initialization.
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// Full logits for every position (row-major T x vocab). Throws Usage
// ContextOverflow when the window exceeds config.context.
std::vector<double> forward_logits(const Model& model, std::span<const ContextTuple> window);
// Logits at the last position only (rollout fast path).
std::vector<double> forward_last(const Model& model, std::span<const ContextTuple> window);

// Mean next-trade-token cross entropy over the window (targets are the
// trade components shifted by one). Window length must be >= 2.
double sequence_loss(const Model& model, std::span<const ContextTuple> window);
// Accumulates dLoss/dparams into grad (same layout), where the loss summed
// over the window positions is multiplied by scale. Returns the unscaled
// cross-entropy sum and the number of predicted positions.
double sequence_loss_and_grad(const Model& model, std::span<const ContextTuple> window, double scale,
                              std::vector<double>& grad, std::size_t& positions);

struct SamplerConfig {
    double temperature = 1.0;
    double repetition_penalty = 1.2;
    int penalty_window = 64;  // most recent generated tokens considered
};

// CTRL-style repetition penalty over the recent generated history (each
// distinct token penalized once: positive logits divided, others
// multiplied), then temperature softmax; temperature -> 0 is argmax.
int sample_next(std::span<const double> logits, std::span<const int> recent_tokens,
                const SamplerConfig& cfg, Rng& rng);

struct TrainConfig {
    double lr = 1e-2;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global norm, 0 disables
    int warmup_steps = 20;
    int total_steps = 200;
    int batch_size = 8;
    double val_fraction = 0.1;
    int eval_every = 20;
    std::uint64_t seed = 1;
    double target_val_loss = 0.0;  // > 0 enables early stopping
};

struct LossPoint {
    int step = 0;  // 0 = before any update
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<LossPoint> curve;
    double final_val_loss = 0.0;
    int steps_run = 0;
};

// AdamW with linear warmup then linear decay to zero. Windows of
// (context + 1) tokens are cut from each sequence with stride = context,
// shuffled with the config seed. total_steps == 0 returns the model
// untouched. Throws Numeric NonFiniteLoss / DivergedLoss.
TrainResult train_model(Model& model, const std::vector<std::vector<ContextTuple>>& sequences,
                        const TrainConfig& cfg);

inline constexpr const char* kCheckpointHeader = "tradefm-toy v1";
inline constexpr const char* kLossCurveCsvHeader = "step,train_loss,val_loss";

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);  // throws Data CheckpointVersionMismatch / CorruptCheckpoint
void write_loss_curve_csv(const std::vector<LossPoint>& curve, const std::string& path);

}  // namespace flowsim
