#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sot/head.hpp"

namespace sot {

// Tokens are rows inside the transformer: X is T x p with T = seq_len + 1 and
// row 0 the classification token. The pooling modules use the p x q
// columns-as-tokens orientation, so the model transposes at the head
// boundary.

struct LayerNormParams {
    Vector gain, bias;
};

struct AttentionParams {
    Matrix wq, wk, wv, wo; // p x p, row convention y = x W + b
    Vector bq, bk, bv, bo;
};

struct MlpParams {
    Matrix w1, w2; // p x hidden, hidden x p
    Vector b1, b2;
};

struct BlockParams {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    MlpParams mlp;
};

struct EmbedParams {
    Matrix proj;       // p x p token projection
    Vector proj_bias;  // p
    Vector class_token; // p
    Matrix pos;        // (q+1) x p positional embeddings
};

enum class SynthKind { mean_task, covariance_task };

const char* synth_kind_name(SynthKind kind);
SynthKind synth_kind_from_name(const std::string& name);

/// Synthetic task generator spec. The covariance task draws zero-mean tokens
/// whose covariance depends on the class, so classes are indistinguishable to
/// first-order statistics by construction.
struct SynthTaskSpec {
    SynthKind kind = SynthKind::covariance_task;
    int class_count = 4;
    int token_dim = 32;
    int seq_len = 16;
    double noise = 0.1;
    std::uint64_t seed = 1;
};

struct SynthDataset {
    std::vector<Matrix> samples; // p x q each, tokens as columns
    std::vector<int> labels;
};

SynthDataset make_synth(const SynthTaskSpec& spec, int count);

struct ToyModelConfig {
    int depth = 2;
    int token_dim = 32; // p
    int msa_heads = 2;
    int mlp_hidden = 64;
    int seq_len = 16; // q
    int class_count = 4;

    PoolKind pool = PoolKind::mgcrp;
    bool class_only = false; // ClassT-only baseline: no pooling branch
    double mpn_beta = 0.5;
    int mgcrp_heads = 2, mgcrp_m = 6, mgcrp_n = 6;
    SvpnConfig svpn;

    FusionScheme scheme = FusionScheme::sum;
    double dropout_rate = 0.0;

    std::uint64_t seed = 1;

    void validate() const;
};

struct ToyParams {
    EmbedParams embed;
    std::vector<BlockParams> blocks;
    MgcrpParams mgcrp; // empty unless pool == mgcrp
    HeadParams head;
};

// -- caches ------------------------------------------------------------------

struct LayerNormCache {
    Matrix x_hat;     // normalized rows
    Vector inv_sigma; // per row
};

struct AttentionCache {
    Matrix input;              // the LN output fed to the attention
    Matrix q, k, v;            // T x p
    std::vector<Matrix> attn;  // per head, T x T row-stochastic
    Matrix concat;             // T x p
};

struct BlockCache {
    Matrix x_in;
    LayerNormCache ln1, ln2;
    Matrix n1, n2;
    AttentionCache attn;
    Matrix x_mid;  // x_in + attention branch
    Matrix h_pre;  // T x hidden, before the activation
    Matrix h_act;
};

struct ModelCache {
    Matrix sample;     // p x q input
    Matrix tokens_rows; // q x p projected tokens before class/pos
    Matrix x0;         // embedded sequence, T x p
    std::vector<BlockCache> blocks;
    Matrix x_final;
    TokenBatch split;
    HeadCache head;
};

// -- layers -------------------------------------------------------------------

/// Per-row layer norm with learnable gain/bias.
Matrix layer_norm_rows(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache = nullptr,
                       double eps = 1e-5);

struct LayerNormGrads {
    Vector d_gain, d_bias;
};

Matrix layer_norm_rows_backward(const Matrix& grad_out, const LayerNormParams& p,
                                const LayerNormCache& cache, LayerNormGrads& grads,
                                double eps = 1e-5);

/// Pre-norm residual block: x + MSA(LN(x)) followed by x + MLP(LN(x)).
Matrix transformer_block(const Matrix& x, const BlockParams& params, int msa_heads,
                         BlockCache* cache = nullptr);

struct BlockGrads {
    LayerNormGrads ln1, ln2;
    AffineGrads wq, wk, wv, wo; // d_w / d_b pairs
    AffineGrads mlp1, mlp2;
};

Matrix transformer_block_backward(const Matrix& grad_out, const BlockParams& params,
                                  int msa_heads, const BlockCache& cache, BlockGrads& grads);

/// Projects each input token, prepends the learnable classification token,
/// and adds positional embeddings. Output has seq_len + 1 token rows.
Matrix embed(const Matrix& sample, const EmbedParams& params, Matrix* tokens_rows = nullptr);

/// Splits the processed sequence into the classification token and the
/// word-token matrix (p x q, columns as tokens).
TokenBatch split_tokens(const Matrix& x);

// -- model --------------------------------------------------------------------

class ToyModel {
public:
    ToyModel() = default;
    ToyModel(const ToyModelConfig& cfg, std::uint64_t seed);

    const ToyModelConfig& config() const { return cfg_; }
    ToyParams& params() { return params_; }
    const ToyParams& params() const { return params_; }
    PoolSpec pool_spec() const;

    HeadOutput forward(const Matrix& sample, bool training = false,
                       std::uint64_t dropout_seed = 0, ModelCache* cache = nullptr) const;

    /// Cross-entropy loss plus gradients for every parameter; the returned
    /// gradients mirror the layout of params().
    double loss_and_grads(const Matrix& sample, int label, double label_smoothing,
                          bool training, std::uint64_t dropout_seed, ToyParams& grads) const;

    /// Zero-initialized gradient container matching this model's parameters.
    ToyParams make_grad_store() const;

private:
    ToyModelConfig cfg_;
    ToyParams params_;
};

/// Visits every learnable parameter as (name, contiguous span), in a fixed
/// order shared by parameters and gradient stores.
template <typename F>
void for_each_param(const ToyModelConfig& cfg, ToyParams& p, F&& f) {
    auto mat = [&](const std::string& name, Matrix& m) {
        f(name, std::span<double>(m.data(), m.size()));
    };
    auto vec = [&](const std::string& name, Vector& v) {
        f(name, std::span<double>(v.data(), v.size()));
    };

    mat("embed.proj", p.embed.proj);
    vec("embed.proj_bias", p.embed.proj_bias);
    vec("embed.class_token", p.embed.class_token);
    mat("embed.pos", p.embed.pos);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        BlockParams& blk = p.blocks[b];
        vec(prefix + "ln1.gain", blk.ln1.gain);
        vec(prefix + "ln1.bias", blk.ln1.bias);
        mat(prefix + "attn.wq", blk.attn.wq);
        vec(prefix + "attn.bq", blk.attn.bq);
        mat(prefix + "attn.wk", blk.attn.wk);
        vec(prefix + "attn.bk", blk.attn.bk);
        mat(prefix + "attn.wv", blk.attn.wv);
        vec(prefix + "attn.bv", blk.attn.bv);
        mat(prefix + "attn.wo", blk.attn.wo);
        vec(prefix + "attn.bo", blk.attn.bo);
        vec(prefix + "ln2.gain", blk.ln2.gain);
        vec(prefix + "ln2.bias", blk.ln2.bias);
        mat(prefix + "mlp.w1", blk.mlp.w1);
        vec(prefix + "mlp.b1", blk.mlp.b1);
        mat(prefix + "mlp.w2", blk.mlp.w2);
        vec(prefix + "mlp.b2", blk.mlp.b2);
    }
    if (cfg.pool == PoolKind::mgcrp && !cfg.class_only) {
        for (std::size_t h = 0; h < p.mgcrp.heads.size(); ++h) {
            mat("mgcrp.head" + std::to_string(h) + ".w", p.mgcrp.heads[h].w);
            mat("mgcrp.head" + std::to_string(h) + ".r", p.mgcrp.heads[h].r);
        }
    }
    if (p.head.fc_class.has_value()) {
        mat("head.fc_class.w", p.head.fc_class->w);
        vec("head.fc_class.b", p.head.fc_class->b);
    }
    if (p.head.fc_words.has_value()) {
        mat("head.fc_words.w", p.head.fc_words->w);
        vec("head.fc_words.b", p.head.fc_words->b);
    }
    if (p.head.fc_joint.has_value()) {
        mat("head.fc_joint.w", p.head.fc_joint->w);
        vec("head.fc_joint.b", p.head.fc_joint->b);
    }
}

// -- training -------------------------------------------------------------------

struct TrainConfig {
    int steps = 500;
    int batch = 16;
    double base_lr = 1e-3;
    double final_lr = 1e-5;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double label_smoothing = 0.0;
    int train_count = 512;
    int test_count = 512;
};

struct TrainReport {
    bool diverged = false;
    std::string diagnostic;
    int steps_run = 0;
    double final_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<double> losses; // per-step batch loss

    std::string to_key_values() const;
};

/// Minibatch AdamW training with a cosine learning-rate schedule. Fully
/// deterministic given the config seeds; aborts (diverged = true) on a
/// non-finite loss. The trained model is copied into `out_model` when given.
TrainReport train(const ToyModelConfig& model_cfg, const SynthTaskSpec& task,
                  const TrainConfig& train_cfg, ToyModel* out_model = nullptr);

double evaluate_accuracy(const ToyModel& model, const SynthDataset& data);

} // namespace sot
