#pragma once

#include <optional>
#include <string>

#include "sot/pooling.hpp"

namespace sot {

enum class FusionScheme { sum, concat, aggr_all, late };

const char* fusion_scheme_name(FusionScheme scheme);
FusionScheme fusion_scheme_from_name(const std::string& name);

/// Affine map y = W x + b with W stored out x in.
struct Affine {
    Matrix w;
    Vector b;

    std::size_t in_dim() const { return w.cols(); }
    std::size_t out_dim() const { return w.rows(); }
};

Affine make_affine(std::size_t out, std::size_t in, Rng rng, double stddev = 0.02);

struct AffineGrads {
    Matrix d_w;
    Vector d_b;
};

/// Fusion-scheme selector plus the fully-connected maps of the active branch.
/// Exactly the maps the scheme requires must be present, with one sanctioned
/// reduction: the sum scheme with fc_words absent is the ClassT-only baseline
/// (no pooling branch at all).
struct HeadParams {
    FusionScheme scheme = FusionScheme::sum;
    std::optional<Affine> fc_class; // sum, late
    std::optional<Affine> fc_words; // sum, late
    std::optional<Affine> fc_joint; // concat: (p + d_pool) -> C; aggr_all: d_pool -> C
    double dropout_rate = 0.0;
    std::size_t class_count = 0;

    bool class_only() const { return scheme == FusionScheme::sum && !fc_words.has_value(); }
    void validate(std::size_t token_dim, std::size_t pool_dim) const;
};

/// Seeded construction for one scheme; weights Gaussian std 0.02, zero biases.
HeadParams make_head_params(FusionScheme scheme, std::size_t token_dim, std::size_t pool_dim,
                            std::size_t class_count, double dropout_rate, Rng rng);

enum class ScoreKind { probability_vector, probability_sum };

/// Class scores. probability_vector entries sum to 1; probability_sum (late
/// scheme) is a sum of two softmax outputs and sums to 2.
struct HeadOutput {
    Vector scores;
    ScoreKind kind = ScoreKind::probability_vector;
};

struct HeadCache {
    FusionScheme scheme = FusionScheme::sum;
    TokenBatch tokens;
    Vector pooled_raw;     // before dropout
    Vector pooled;         // after dropout (equal when not training)
    Vector dropout_mask;   // per-entry keep-scale, empty when inactive
    Vector logits;         // early schemes
    Vector probs;          // softmax(logits)
    Vector logits_class, probs_class; // late scheme branch 1
    Vector logits_words, probs_words; // late scheme branch 2
    PoolingCache pool;
    bool used_pooling = false;
    bool aggr_all_tokens = false; // pooling consumed [z0, Z]
    std::size_t class_count = 0;
};

/// Runs the selected fusion scheme. For aggr_all the pooling consumes
/// [z0, Z] as a p x (q+1) matrix. Dropout (inverted scaling, seeded mask) is
/// applied to the pooled vector only in training mode.
HeadOutput head_forward(const TokenBatch& tokens, const PoolSpec& pool, const HeadParams& head,
                        bool training = false, std::uint64_t dropout_seed = 0,
                        HeadCache* cache = nullptr);

/// Cross-entropy -log p[label] with optional label smoothing. probability_sum
/// outputs are renormalized by their total before the log; probabilities are
/// floored at 1e-15.
double cross_entropy(const HeadOutput& output, std::size_t label, double smoothing = 0.0);

struct HeadGrads {
    Vector d_class_token;
    Matrix d_words;
    std::optional<AffineGrads> d_fc_class, d_fc_words, d_fc_joint;
    std::vector<Matrix> d_pool_w, d_pool_r; // mgcrp projections
    bool degenerate = false;
};

/// Backward from an upstream gradient on the scores (through the softmax(es),
/// affine maps, dropout mask, and pooling).
HeadGrads head_backward(const HeadCache& cache, const PoolSpec& pool, const HeadParams& head,
                        const Vector& grad_scores);

/// Backward of cross_entropy(head_forward(...), label): starts from the exact
/// softmax cross-entropy logit gradient (probs minus smoothed target).
HeadGrads head_loss_backward(const HeadCache& cache, const PoolSpec& pool, const HeadParams& head,
                             std::size_t label, double smoothing = 0.0);

// Shared plumbing, also used by the toy model.
Vector softmax(const Vector& logits);
Vector softmax_vjp(const Vector& probs, const Vector& grad_probs);
Vector affine_forward(const Affine& a, const Vector& x);
Vector affine_backward(const Affine& a, const Vector& x, const Vector& grad_out,
                       AffineGrads& grads);

} // namespace sot
