#include "sot/head.hpp"

#include <algorithm>
#include <cmath>

namespace sot {

const char* fusion_scheme_name(FusionScheme scheme) {
    switch (scheme) {
        case FusionScheme::sum: return "sum";
        case FusionScheme::concat: return "concat";
        case FusionScheme::aggr_all: return "aggr_all";
        case FusionScheme::late: return "late";
    }
    return "?";
}

FusionScheme fusion_scheme_from_name(const std::string& name) {
    if (name == "sum") return FusionScheme::sum;
    if (name == "concat") return FusionScheme::concat;
    if (name == "aggr_all") return FusionScheme::aggr_all;
    if (name == "late") return FusionScheme::late;
    throw ConfigError("unknown fusion scheme: " + name);
}

Affine make_affine(std::size_t out, std::size_t in, Rng rng, double stddev) {
    Affine a;
    a.w = Matrix(out, in);
    a.b.assign(out, 0.0);
    for (std::size_t i = 0; i < a.w.size(); ++i) a.w.data()[i] = rng.gaussian(0.0, stddev);
    return a;
}

void HeadParams::validate(std::size_t token_dim, std::size_t pool_dim) const {
    if (class_count < 2) throw ConfigError("head: class_count must be at least 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("head: dropout_rate must be in [0, 1)");

    auto expect = [&](const std::optional<Affine>& map, bool required, const char* name,
                      std::size_t in_dim) {
        if (required) {
            if (!map.has_value())
                throw ConfigError(std::string("head: scheme ") + fusion_scheme_name(scheme) +
                                  " requires " + name);
            if (map->out_dim() != class_count || map->in_dim() != in_dim)
                throw ConfigError(std::string("head: ") + name + " must be " +
                                  std::to_string(class_count) + "x" + std::to_string(in_dim));
            if (map->b.size() != class_count)
                throw ConfigError(std::string("head: ") + name + " bias length mismatch");
        } else if (map.has_value()) {
            throw ConfigError(std::string("head: scheme ") + fusion_scheme_name(scheme) +
                              " must not carry " + name);
        }
    };

    switch (scheme) {
        case FusionScheme::sum:
            expect(fc_class, true, "fc_class", token_dim);
            // fc_words may be absent: the ClassT-only baseline reduction.
            if (fc_words.has_value()) expect(fc_words, true, "fc_words", pool_dim);
            expect(fc_joint, false, "fc_joint", 0);
            break;
        case FusionScheme::concat:
            expect(fc_class, false, "fc_class", 0);
            expect(fc_words, false, "fc_words", 0);
            expect(fc_joint, true, "fc_joint", token_dim + pool_dim);
            break;
        case FusionScheme::aggr_all:
            expect(fc_class, false, "fc_class", 0);
            expect(fc_words, false, "fc_words", 0);
            expect(fc_joint, true, "fc_joint", pool_dim);
            break;
        case FusionScheme::late:
            expect(fc_class, true, "fc_class", token_dim);
            expect(fc_words, true, "fc_words", pool_dim);
            expect(fc_joint, false, "fc_joint", 0);
            break;
    }
}

HeadParams make_head_params(FusionScheme scheme, std::size_t token_dim, std::size_t pool_dim,
                            std::size_t class_count, double dropout_rate, Rng rng) {
    HeadParams head;
    head.scheme = scheme;
    head.dropout_rate = dropout_rate;
    head.class_count = class_count;
    switch (scheme) {
        case FusionScheme::sum:
        case FusionScheme::late:
            head.fc_class = make_affine(class_count, token_dim, rng.split("head/fc_class"));
            head.fc_words = make_affine(class_count, pool_dim, rng.split("head/fc_words"));
            break;
        case FusionScheme::concat:
            head.fc_joint =
                make_affine(class_count, token_dim + pool_dim, rng.split("head/fc_joint"));
            break;
        case FusionScheme::aggr_all:
            head.fc_joint = make_affine(class_count, pool_dim, rng.split("head/fc_joint"));
            break;
    }
    return head;
}

Vector softmax(const Vector& logits) {
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    Vector p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

Vector softmax_vjp(const Vector& probs, const Vector& grad_probs) {
    const double inner = dot(probs, grad_probs);
    Vector g(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_probs[i] - inner);
    return g;
}

Vector affine_forward(const Affine& a, const Vector& x) {
    Vector y = matvec(a.w, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a.b[i];
    return y;
}

Vector affine_backward(const Affine& a, const Vector& x, const Vector& grad_out,
                       AffineGrads& grads) {
    if (grads.d_w.empty()) {
        grads.d_w = Matrix(a.w.rows(), a.w.cols());
        grads.d_b.assign(a.b.size(), 0.0);
    }
    for (std::size_t i = 0; i < a.w.rows(); ++i) {
        grads.d_b[i] += grad_out[i];
        for (std::size_t j = 0; j < a.w.cols(); ++j) grads.d_w(i, j) += grad_out[i] * x[j];
    }
    return matvec_transposed(a.w, grad_out);
}

namespace {

Matrix tokens_with_class(const TokenBatch& tokens) {
    Matrix all(tokens.words.rows(), tokens.words.cols() + 1);
    for (std::size_t i = 0; i < all.rows(); ++i) {
        all(i, 0) = tokens.class_token[i];
        for (std::size_t j = 0; j < tokens.words.cols(); ++j) all(i, j + 1) = tokens.words(i, j);
    }
    return all;
}

Vector apply_dropout(const Vector& x, double rate, bool training, std::uint64_t seed,
                     Vector* mask_out) {
    if (!training || rate <= 0.0) {
        if (mask_out != nullptr) mask_out->clear();
        return x;
    }
    Rng rng(Rng::mix(seed ^ 0xD50F0A5EULL));
    const double keep_scale = 1.0 / (1.0 - rate);
    Vector mask(x.size());
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        y[i] = x[i] * mask[i];
    }
    if (mask_out != nullptr) *mask_out = std::move(mask);
    return y;
}

} // namespace

HeadOutput head_forward(const TokenBatch& tokens, const PoolSpec& pool, const HeadParams& head,
                        bool training, std::uint64_t dropout_seed, HeadCache* cache) {
    tokens.validate();
    const std::size_t p = tokens.class_token.size();
    const std::size_t pool_dim = head.class_only() ? 0 : pool.output_size(p);
    head.validate(p, pool_dim);

    HeadCache local;
    local.scheme = head.scheme;
    local.tokens = tokens;
    local.class_count = head.class_count;

    HeadOutput out;
    if (!head.class_only()) {
        const Matrix& pool_input_words = tokens.words;
        Matrix all_tokens;
        const bool aggr = head.scheme == FusionScheme::aggr_all;
        if (aggr) all_tokens = tokens_with_class(tokens);
        const Matrix& pool_input = aggr ? all_tokens : pool_input_words;

        local.pooled_raw = pool_forward(pool_input, pool, cache != nullptr ? &local.pool : nullptr);
        local.used_pooling = true;
        local.aggr_all_tokens = aggr;
        local.pooled = apply_dropout(local.pooled_raw, head.dropout_rate, training, dropout_seed,
                                     &local.dropout_mask);
    }

    switch (head.scheme) {
        case FusionScheme::sum: {
            local.logits = affine_forward(*head.fc_class, tokens.class_token);
            if (!head.class_only()) {
                Vector word_logits = affine_forward(*head.fc_words, local.pooled);
                for (std::size_t i = 0; i < local.logits.size(); ++i)
                    local.logits[i] += word_logits[i];
            }
            local.probs = softmax(local.logits);
            out = {local.probs, ScoreKind::probability_vector};
            break;
        }
        case FusionScheme::concat: {
            Vector joint = tokens.class_token;
            joint.insert(joint.end(), local.pooled.begin(), local.pooled.end());
            local.logits = affine_forward(*head.fc_joint, joint);
            local.probs = softmax(local.logits);
            out = {local.probs, ScoreKind::probability_vector};
            break;
        }
        case FusionScheme::aggr_all: {
            local.logits = affine_forward(*head.fc_joint, local.pooled);
            local.probs = softmax(local.logits);
            out = {local.probs, ScoreKind::probability_vector};
            break;
        }
        case FusionScheme::late: {
            local.logits_class = affine_forward(*head.fc_class, tokens.class_token);
            local.probs_class = softmax(local.logits_class);
            local.logits_words = affine_forward(*head.fc_words, local.pooled);
            local.probs_words = softmax(local.logits_words);
            Vector sum(local.probs_class.size());
            for (std::size_t i = 0; i < sum.size(); ++i)
                sum[i] = local.probs_class[i] + local.probs_words[i];
            out = {std::move(sum), ScoreKind::probability_sum};
            break;
        }
    }
    if (cache != nullptr) *cache = std::move(local);
    return out;
}

double cross_entropy(const HeadOutput& output, std::size_t label, double smoothing) {
    const std::size_t c = output.scores.size();
    if (label >= c) throw ConfigError("cross_entropy: label out of range");
    if (!(smoothing >= 0.0 && smoothing < 1.0))
        throw ConfigError("cross_entropy: smoothing must be in [0, 1)");

    double total = 1.0;
    if (output.kind == ScoreKind::probability_sum) {
        total = 0.0;
        for (double s : output.scores) total += s;
    }
    double loss = 0.0;
    const double uniform = smoothing / static_cast<double>(c);
    for (std::size_t i = 0; i < c; ++i) {
        const double target = uniform + (i == label ? 1.0 - smoothing : 0.0);
        if (target == 0.0) continue;
        const double prob = std::max(output.scores[i] / total, 1e-15);
        loss -= target * std::log(prob);
    }
    return loss;
}

namespace {

// Shared tail of both backward entries: takes per-scheme logit gradients and
// routes them through the affine maps, dropout mask, and pooling.
HeadGrads head_backward_from_logits(const HeadCache& cache, const PoolSpec& pool,
                                    const HeadParams& head, const Vector& d_logits,
                                    const Vector& d_logits_class, const Vector& d_logits_words) {
    HeadGrads grads;
    const std::size_t p = cache.tokens.class_token.size();
    grads.d_class_token.assign(p, 0.0);
    grads.d_words = Matrix(cache.tokens.words.rows(), cache.tokens.words.cols());

    Vector d_pooled(cache.pooled.size(), 0.0);
    auto add_to_class = [&](const Vector& g) {
        for (std::size_t i = 0; i < p; ++i) grads.d_class_token[i] += g[i];
    };

    switch (head.scheme) {
        case FusionScheme::sum: {
            grads.d_fc_class.emplace();
            add_to_class(
                affine_backward(*head.fc_class, cache.tokens.class_token, d_logits,
                                *grads.d_fc_class));
            if (!head.class_only()) {
                grads.d_fc_words.emplace();
                d_pooled = affine_backward(*head.fc_words, cache.pooled, d_logits,
                                           *grads.d_fc_words);
            }
            break;
        }
        case FusionScheme::concat: {
            Vector joint = cache.tokens.class_token;
            joint.insert(joint.end(), cache.pooled.begin(), cache.pooled.end());
            grads.d_fc_joint.emplace();
            Vector d_joint = affine_backward(*head.fc_joint, joint, d_logits, *grads.d_fc_joint);
            for (std::size_t i = 0; i < p; ++i) grads.d_class_token[i] += d_joint[i];
            for (std::size_t i = 0; i < d_pooled.size(); ++i) d_pooled[i] = d_joint[p + i];
            break;
        }
        case FusionScheme::aggr_all: {
            grads.d_fc_joint.emplace();
            d_pooled = affine_backward(*head.fc_joint, cache.pooled, d_logits, *grads.d_fc_joint);
            break;
        }
        case FusionScheme::late: {
            grads.d_fc_class.emplace();
            add_to_class(affine_backward(*head.fc_class, cache.tokens.class_token, d_logits_class,
                                         *grads.d_fc_class));
            grads.d_fc_words.emplace();
            d_pooled = affine_backward(*head.fc_words, cache.pooled, d_logits_words,
                                       *grads.d_fc_words);
            break;
        }
    }

    if (cache.used_pooling) {
        if (!cache.dropout_mask.empty())
            for (std::size_t i = 0; i < d_pooled.size(); ++i) d_pooled[i] *= cache.dropout_mask[i];
        PoolingGradients pg = pooling_backward(cache.pool, pool, d_pooled);
        grads.d_pool_w = std::move(pg.d_w);
        grads.d_pool_r = std::move(pg.d_r);
        grads.degenerate = pg.degenerate;
        if (cache.aggr_all_tokens) {
            // Pooling consumed [z0, Z]: split the token gradient back apart.
            for (std::size_t i = 0; i < p; ++i) grads.d_class_token[i] += pg.d_tokens(i, 0);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < grads.d_words.cols(); ++j)
                    grads.d_words(i, j) += pg.d_tokens(i, j + 1);
        } else {
            add_in_place(grads.d_words, pg.d_tokens);
        }
    }
    return grads;
}

} // namespace

HeadGrads head_backward(const HeadCache& cache, const PoolSpec& pool, const HeadParams& head,
                        const Vector& grad_scores) {
    if (cache.scheme != head.scheme || cache.class_count != head.class_count)
        throw ContractError("head_backward: cache does not match the parameters");
    if (grad_scores.size() != head.class_count)
        throw ContractError("head_backward: gradient length mismatch");

    if (head.scheme == FusionScheme::late) {
        // scores = softmax(class logits) + softmax(word logits)
        Vector d_class = softmax_vjp(cache.probs_class, grad_scores);
        Vector d_words = softmax_vjp(cache.probs_words, grad_scores);
        return head_backward_from_logits(cache, pool, head, {}, d_class, d_words);
    }
    Vector d_logits = softmax_vjp(cache.probs, grad_scores);
    return head_backward_from_logits(cache, pool, head, d_logits, {}, {});
}

HeadGrads head_loss_backward(const HeadCache& cache, const PoolSpec& pool, const HeadParams& head,
                             std::size_t label, double smoothing) {
    if (cache.scheme != head.scheme || cache.class_count != head.class_count)
        throw ContractError("head_loss_backward: cache does not match the parameters");
    const std::size_t c = head.class_count;
    if (label >= c) throw ConfigError("head_loss_backward: label out of range");

    Vector target(c, smoothing / static_cast<double>(c));
    target[label] += 1.0 - smoothing;

    if (head.scheme == FusionScheme::late) {
        // loss = -sum_i t_i log((p_a + p_b)_i / 2); the total is exactly 2, so
        // dl/d(p branch)_i = -t_i / (p_a + p_b)_i for both branches.
        Vector d_scores(c, 0.0);
        for (std::size_t i = 0; i < c; ++i) {
            const double s = std::max(cache.probs_class[i] + cache.probs_words[i], 2e-15);
            d_scores[i] = -target[i] / s;
        }
        Vector d_class = softmax_vjp(cache.probs_class, d_scores);
        Vector d_words = softmax_vjp(cache.probs_words, d_scores);
        return head_backward_from_logits(cache, pool, head, {}, d_class, d_words);
    }

    // Softmax cross-entropy shortcut: dl/dlogits = probs - target.
    Vector d_logits(c);
    for (std::size_t i = 0; i < c; ++i) d_logits[i] = cache.probs[i] - target[i];
    return head_backward_from_logits(cache, pool, head, d_logits, {}, {});
}

} // namespace sot
