#include "sot/toy_transformer.hpp"

#include <cmath>
#include <sstream>

namespace sot {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

void add_bias_rows(Matrix& x, const Vector& b) {
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += b[j];
}

Vector column_sums(const Matrix& x) {
    Vector s(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) s[j] += x(i, j);
    return s;
}

} // namespace

const char* synth_kind_name(SynthKind kind) {
    return kind == SynthKind::mean_task ? "mean_task" : "covariance_task";
}

SynthKind synth_kind_from_name(const std::string& name) {
    if (name == "mean_task") return SynthKind::mean_task;
    if (name == "covariance_task") return SynthKind::covariance_task;
    throw ConfigError("unknown synthetic task: " + name);
}

SynthDataset make_synth(const SynthTaskSpec& spec, int count) {
    if (spec.class_count < 2 || spec.token_dim < 1 || spec.seq_len < 1 || count < 0)
        throw ConfigError("make_synth: invalid task spec");
    const std::size_t p = static_cast<std::size_t>(spec.token_dim);
    const std::size_t q = static_cast<std::size_t>(spec.seq_len);
    const std::size_t c_count = static_cast<std::size_t>(spec.class_count);
    Rng root(spec.seed);

    // Class-conditional structure. mean_task: class-specific token means.
    // covariance_task: identical (zero) means, class-specific covariance
    // factors rot * diag(scales_c) with a variance boost on a per-class
    // coordinate group.
    std::vector<Vector> class_means(c_count, Vector(p, 0.0));
    std::vector<Vector> class_scales(c_count, Vector(p, 1.0));
    Matrix rot;
    if (spec.kind == SynthKind::mean_task) {
        for (std::size_t c = 0; c < c_count; ++c) {
            Rng r = root.split("task/mean", c);
            for (double& x : class_means[c]) x = r.gaussian();
        }
    } else {
        for (std::size_t c = 0; c < c_count; ++c)
            for (std::size_t i = 0; i < p; ++i)
                class_scales[c][i] = (i % c_count == c) ? 2.0 : 0.4;
        // One fixed rotation shared by all classes keeps the structure away
        // from the coordinate axes.
        Rng r = root.split("task/rotation");
        Matrix g(p, p);
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = r.gaussian();
        rot = svd(g).u;
    }

    SynthDataset data;
    data.samples.reserve(static_cast<std::size_t>(count));
    data.labels.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        const std::size_t label = static_cast<std::size_t>(s) % c_count;
        Rng r = root.split("sample", static_cast<std::uint64_t>(s));
        Matrix sample(p, q);
        for (std::size_t j = 0; j < q; ++j) {
            if (spec.kind == SynthKind::mean_task) {
                for (std::size_t i = 0; i < p; ++i)
                    sample(i, j) = class_means[label][i] + spec.noise * r.gaussian();
            } else {
                Vector eps(p);
                for (std::size_t i = 0; i < p; ++i)
                    eps[i] = class_scales[label][i] * r.gaussian();
                Vector tok = matvec(rot, eps);
                for (std::size_t i = 0; i < p; ++i)
                    sample(i, j) = tok[i] + spec.noise * r.gaussian();
            }
        }
        data.samples.push_back(std::move(sample));
        data.labels.push_back(static_cast<int>(label));
    }
    return data;
}

void ToyModelConfig::validate() const {
    if (depth < 1 || token_dim < 1 || msa_heads < 1 || mlp_hidden < 1 || seq_len < 1 ||
        class_count < 2)
        throw ConfigError("toy model: all sizes must be positive (class_count >= 2)");
    if (token_dim % msa_heads != 0)
        throw ConfigError("toy model: token_dim must be divisible by msa_heads");
    if (pool == PoolKind::mgcrp && !class_only) {
        if (mgcrp_heads < 1 || mgcrp_m < 1 || mgcrp_n < 1)
            throw ConfigError("toy model: mgcrp sizes must be positive");
        svpn.validate(static_cast<std::size_t>(mgcrp_m), static_cast<std::size_t>(mgcrp_n));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("toy model: dropout_rate must be in [0, 1)");
}

Matrix layer_norm_rows(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache,
                       double eps) {
    const std::size_t d = x.cols();
    if (p.gain.size() != d || p.bias.size() != d)
        throw ShapeError("layer_norm_rows: gain/bias width mismatch");
    Matrix out(x.rows(), d);
    Matrix x_hat(x.rows(), d);
    Vector inv_sigma(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = x(i, j) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            x_hat(i, j) = (x(i, j) - mean) * is;
            out(i, j) = p.gain[j] * x_hat(i, j) + p.bias[j];
        }
    }
    if (cache != nullptr) {
        cache->x_hat = std::move(x_hat);
        cache->inv_sigma = std::move(inv_sigma);
    }
    return out;
}

Matrix layer_norm_rows_backward(const Matrix& grad_out, const LayerNormParams& p,
                                const LayerNormCache& cache, LayerNormGrads& grads, double) {
    const std::size_t d = grad_out.cols();
    if (grads.d_gain.empty()) {
        grads.d_gain.assign(d, 0.0);
        grads.d_bias.assign(d, 0.0);
    }
    Matrix dx(grad_out.rows(), d);
    for (std::size_t i = 0; i < grad_out.rows(); ++i) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = grad_out(i, j);
            grads.d_gain[j] += g * cache.x_hat(i, j);
            grads.d_bias[j] += g;
            const double dxh = g * p.gain[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * cache.x_hat(i, j);
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = grad_out(i, j) * p.gain[j];
            dx(i, j) = cache.inv_sigma[i] *
                       (dxh - mean_dxhat - cache.x_hat(i, j) * mean_dxhat_xhat);
        }
    }
    return dx;
}

namespace {

Matrix attention_forward(const Matrix& n1, const AttentionParams& p, int heads,
                         AttentionCache* cache) {
    const std::size_t t = n1.rows();
    const std::size_t dim = n1.cols();
    const std::size_t dh = dim / static_cast<std::size_t>(heads);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix q = matmul(n1, p.wq);
    add_bias_rows(q, p.bq);
    Matrix k = matmul(n1, p.wk);
    add_bias_rows(k, p.bk);
    Matrix v = matmul(n1, p.wv);
    add_bias_rows(v, p.bv);

    Matrix concat(t, dim);
    std::vector<Matrix> attn_mats;
    attn_mats.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        Matrix scores(t, t);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
                scores(i, j) = s * inv_sqrt_dh;
            }
        // Row softmax: row i holds the attention of query token i.
        Matrix a(t, t);
        for (std::size_t i = 0; i < t; ++i) {
            double mx = scores(i, 0);
            for (std::size_t j = 1; j < t; ++j) mx = std::max(mx, scores(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                a(i, j) = std::exp(scores(i, j) - mx);
                sum += a(i, j);
            }
            for (std::size_t j = 0; j < t; ++j) a(i, j) /= sum;
        }
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < t; ++j) s += a(i, j) * v(j, off + c);
                concat(i, off + c) = s;
            }
        attn_mats.push_back(std::move(a));
    }

    Matrix out = matmul(concat, p.wo);
    add_bias_rows(out, p.bo);
    if (cache != nullptr) {
        cache->input = n1;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn_mats);
        cache->concat = std::move(concat);
    }
    return out;
}

Matrix attention_backward(const Matrix& grad_out, const AttentionParams& p, int heads,
                          const AttentionCache& cache, BlockGrads& grads) {
    const std::size_t t = grad_out.rows();
    const std::size_t dim = grad_out.cols();
    const std::size_t dh = dim / static_cast<std::size_t>(heads);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    auto ensure = [](AffineGrads& g, const Matrix& w) {
        if (g.d_w.empty()) {
            g.d_w = Matrix(w.rows(), w.cols());
            g.d_b.assign(w.cols(), 0.0);
        }
    };
    ensure(grads.wq, p.wq);
    ensure(grads.wk, p.wk);
    ensure(grads.wv, p.wv);
    ensure(grads.wo, p.wo);

    // out = concat * Wo + bo
    add_in_place(grads.wo.d_w, matmul(transpose(cache.concat), grad_out));
    {
        Vector cs = column_sums(grad_out);
        for (std::size_t j = 0; j < cs.size(); ++j) grads.wo.d_b[j] += cs[j];
    }
    Matrix d_concat = matmul(grad_out, transpose(p.wo));

    Matrix d_q(t, dim), d_k(t, dim), d_v(t, dim);
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        const Matrix& a = cache.attn[static_cast<std::size_t>(h)];

        // concat_h = A V_h
        Matrix d_a(t, t);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += d_concat(i, off + c) * cache.v(j, off + c);
                d_a(i, j) = s;
            }
        for (std::size_t j = 0; j < t; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < t; ++i) s += a(i, j) * d_concat(i, off + c);
                d_v(j, off + c) += s;
            }

        // Row softmax VJP.
        Matrix d_scores(t, t);
        for (std::size_t i = 0; i < t; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < t; ++j) inner += d_a(i, j) * a(i, j);
            for (std::size_t j = 0; j < t; ++j)
                d_scores(i, j) = a(i, j) * (d_a(i, j) - inner);
        }

        // scores = Q_h K_h^T / sqrt(dh)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                double sq = 0.0;
                for (std::size_t j = 0; j < t; ++j) sq += d_scores(i, j) * cache.k(j, off + c);
                d_q(i, off + c) += sq * inv_sqrt_dh;
            }
        for (std::size_t j = 0; j < t; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
                double sk = 0.0;
                for (std::size_t i = 0; i < t; ++i) sk += d_scores(i, j) * cache.q(i, off + c);
                d_k(j, off + c) += sk * inv_sqrt_dh;
            }
    }

    // Q = input Wq + bq, etc.
    add_in_place(grads.wq.d_w, matmul(transpose(cache.input), d_q));
    add_in_place(grads.wk.d_w, matmul(transpose(cache.input), d_k));
    add_in_place(grads.wv.d_w, matmul(transpose(cache.input), d_v));
    {
        Vector sq = column_sums(d_q), sk = column_sums(d_k), sv = column_sums(d_v);
        for (std::size_t j = 0; j < dim; ++j) {
            grads.wq.d_b[j] += sq[j];
            grads.wk.d_b[j] += sk[j];
            grads.wv.d_b[j] += sv[j];
        }
    }
    Matrix d_input = matmul(d_q, transpose(p.wq));
    add_in_place(d_input, matmul(d_k, transpose(p.wk)));
    add_in_place(d_input, matmul(d_v, transpose(p.wv)));
    return d_input;
}

} // namespace

Matrix transformer_block(const Matrix& x, const BlockParams& params, int msa_heads,
                         BlockCache* cache) {
    if (x.rows() < 1) throw ShapeError("transformer_block: need at least one token");
    BlockCache local;
    local.x_in = x;

    Matrix n1 = layer_norm_rows(x, params.ln1, cache != nullptr ? &local.ln1 : nullptr, kLnEps);
    Matrix attn_out =
        attention_forward(n1, params.attn, msa_heads, cache != nullptr ? &local.attn : nullptr);
    Matrix x_mid = add(x, attn_out);

    Matrix n2 =
        layer_norm_rows(x_mid, params.ln2, cache != nullptr ? &local.ln2 : nullptr, kLnEps);
    Matrix h_pre = matmul(n2, params.mlp.w1);
    add_bias_rows(h_pre, params.mlp.b1);
    Matrix h_act(h_pre.rows(), h_pre.cols());
    for (std::size_t i = 0; i < h_pre.size(); ++i) h_act.data()[i] = gelu(h_pre.data()[i]);
    Matrix mlp_out = matmul(h_act, params.mlp.w2);
    add_bias_rows(mlp_out, params.mlp.b2);
    Matrix x_out = add(x_mid, mlp_out);

    if (cache != nullptr) {
        local.n1 = std::move(n1);
        local.n2 = std::move(n2);
        local.x_mid = std::move(x_mid);
        local.h_pre = std::move(h_pre);
        local.h_act = std::move(h_act);
        *cache = std::move(local);
    }
    return x_out;
}

Matrix transformer_block_backward(const Matrix& grad_out, const BlockParams& params,
                                  int msa_heads, const BlockCache& cache, BlockGrads& grads) {
    auto ensure = [](AffineGrads& g, const Matrix& w) {
        if (g.d_w.empty()) {
            g.d_w = Matrix(w.rows(), w.cols());
            g.d_b.assign(w.cols(), 0.0);
        }
    };
    ensure(grads.mlp1, params.mlp.w1);
    ensure(grads.mlp2, params.mlp.w2);

    // x_out = x_mid + MLP(LN2(x_mid))
    Matrix d_x_mid = grad_out;
    add_in_place(grads.mlp2.d_w, matmul(transpose(cache.h_act), grad_out));
    {
        Vector cs = column_sums(grad_out);
        for (std::size_t j = 0; j < cs.size(); ++j) grads.mlp2.d_b[j] += cs[j];
    }
    Matrix d_h_act = matmul(grad_out, transpose(params.mlp.w2));
    Matrix d_h_pre(d_h_act.rows(), d_h_act.cols());
    for (std::size_t i = 0; i < d_h_act.size(); ++i)
        d_h_pre.data()[i] = d_h_act.data()[i] * gelu_grad(cache.h_pre.data()[i]);
    add_in_place(grads.mlp1.d_w, matmul(transpose(cache.n2), d_h_pre));
    {
        Vector cs = column_sums(d_h_pre);
        for (std::size_t j = 0; j < cs.size(); ++j) grads.mlp1.d_b[j] += cs[j];
    }
    Matrix d_n2 = matmul(d_h_pre, transpose(params.mlp.w1));
    add_in_place(d_x_mid, layer_norm_rows_backward(d_n2, params.ln2, cache.ln2, grads.ln2, kLnEps));

    // x_mid = x_in + MSA(LN1(x_in))
    Matrix d_x = d_x_mid;
    Matrix d_n1 = attention_backward(d_x_mid, params.attn, msa_heads, cache.attn, grads);
    add_in_place(d_x, layer_norm_rows_backward(d_n1, params.ln1, cache.ln1, grads.ln1, kLnEps));
    return d_x;
}

Matrix embed(const Matrix& sample, const EmbedParams& params, Matrix* tokens_rows) {
    const std::size_t p = params.class_token.size();
    if (sample.rows() != p) throw ShapeError("embed: sample token dimension mismatch");
    const std::size_t q = sample.cols();
    if (params.pos.rows() != q + 1 || params.pos.cols() != p)
        throw ShapeError("embed: positional table must be (seq_len+1) x token_dim");
    ensure_finite(sample, "embed");

    Matrix rows = matmul(transpose(sample), params.proj); // q x p
    add_bias_rows(rows, params.proj_bias);

    Matrix x(q + 1, p);
    for (std::size_t j = 0; j < p; ++j) x(0, j) = params.class_token[j] + params.pos(0, j);
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < p; ++j) x(i + 1, j) = rows(i, j) + params.pos(i + 1, j);
    if (tokens_rows != nullptr) *tokens_rows = std::move(rows);
    return x;
}

TokenBatch split_tokens(const Matrix& x) {
    if (x.rows() < 2) throw ShapeError("split_tokens: need the class token plus at least one word");
    TokenBatch tb;
    tb.class_token.assign(x.cols(), 0.0);
    for (std::size_t j = 0; j < x.cols(); ++j) tb.class_token[j] = x(0, j);
    tb.words = Matrix(x.cols(), x.rows() - 1);
    for (std::size_t i = 1; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) tb.words(j, i - 1) = x(i, j);
    return tb;
}

ToyModel::ToyModel(const ToyModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng root(seed);
    const std::size_t p = static_cast<std::size_t>(cfg.token_dim);
    const std::size_t q = static_cast<std::size_t>(cfg.seq_len);

    auto gauss_matrix = [](Matrix& m, Rng rng, double stddev) {
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian(0.0, stddev);
    };
    auto gauss_vector = [](Vector& v, Rng rng, double stddev) {
        for (double& x : v) x = rng.gaussian(0.0, stddev);
    };

    params_.embed.proj = Matrix(p, p);
    gauss_matrix(params_.embed.proj, root.split("embed/proj"), 0.02);
    params_.embed.proj_bias.assign(p, 0.0);
    params_.embed.class_token.assign(p, 0.0);
    gauss_vector(params_.embed.class_token, root.split("embed/class"), 0.02);
    params_.embed.pos = Matrix(q + 1, p);
    gauss_matrix(params_.embed.pos, root.split("embed/pos"), 0.02);

    const std::size_t hidden = static_cast<std::size_t>(cfg.mlp_hidden);
    for (int b = 0; b < cfg.depth; ++b) {
        BlockParams blk;
        blk.ln1.gain.assign(p, 1.0);
        blk.ln1.bias.assign(p, 0.0);
        blk.ln2.gain.assign(p, 1.0);
        blk.ln2.bias.assign(p, 0.0);
        const auto bi = static_cast<std::uint64_t>(b);
        blk.attn.wq = Matrix(p, p);
        gauss_matrix(blk.attn.wq, root.split("attn/wq", bi), 0.02);
        blk.attn.wk = Matrix(p, p);
        gauss_matrix(blk.attn.wk, root.split("attn/wk", bi), 0.02);
        blk.attn.wv = Matrix(p, p);
        gauss_matrix(blk.attn.wv, root.split("attn/wv", bi), 0.02);
        blk.attn.wo = Matrix(p, p);
        gauss_matrix(blk.attn.wo, root.split("attn/wo", bi), 0.02);
        blk.attn.bq.assign(p, 0.0);
        blk.attn.bk.assign(p, 0.0);
        blk.attn.bv.assign(p, 0.0);
        blk.attn.bo.assign(p, 0.0);
        blk.mlp.w1 = Matrix(p, hidden);
        gauss_matrix(blk.mlp.w1, root.split("mlp/w1", bi), 0.02);
        blk.mlp.w2 = Matrix(hidden, p);
        gauss_matrix(blk.mlp.w2, root.split("mlp/w2", bi), 0.02);
        blk.mlp.b1.assign(hidden, 0.0);
        blk.mlp.b2.assign(p, 0.0);
        params_.blocks.push_back(std::move(blk));
    }

    std::size_t pool_dim = 0;
    if (!cfg.class_only) {
        switch (cfg.pool) {
            case PoolKind::gap: pool_dim = p; break;
            case PoolKind::gcp: pool_dim = p * p; break;
            case PoolKind::mgcrp:
                params_.mgcrp = make_mgcrp_params(
                    static_cast<std::size_t>(cfg.mgcrp_heads), static_cast<std::size_t>(cfg.mgcrp_m),
                    static_cast<std::size_t>(cfg.mgcrp_n), p, cfg.svpn, root.split("mgcrp"));
                pool_dim = params_.mgcrp.representation_size();
                break;
        }
    }

    if (cfg.class_only) {
        // ClassT-only baseline: sum scheme with the pooling branch absent.
        params_.head.scheme = FusionScheme::sum;
        params_.head.class_count = static_cast<std::size_t>(cfg.class_count);
        params_.head.dropout_rate = cfg.dropout_rate;
        params_.head.fc_class = make_affine(static_cast<std::size_t>(cfg.class_count), p,
                                            root.split("head/fc_class"));
    } else {
        params_.head = make_head_params(cfg.scheme, p, pool_dim,
                                        static_cast<std::size_t>(cfg.class_count),
                                        cfg.dropout_rate, root.split("head"));
    }
}

PoolSpec ToyModel::pool_spec() const {
    PoolSpec spec;
    spec.kind = cfg_.pool;
    spec.mpn_beta = cfg_.mpn_beta;
    spec.mgcrp = cfg_.pool == PoolKind::mgcrp ? &params_.mgcrp : nullptr;
    return spec;
}

HeadOutput ToyModel::forward(const Matrix& sample, bool training, std::uint64_t dropout_seed,
                             ModelCache* cache) const {
    ModelCache local;
    local.sample = sample;
    Matrix x = embed(sample, params_.embed, cache != nullptr ? &local.tokens_rows : nullptr);
    if (cache != nullptr) local.x0 = x;

    local.blocks.resize(static_cast<std::size_t>(cfg_.depth));
    for (int b = 0; b < cfg_.depth; ++b)
        x = transformer_block(x, params_.blocks[static_cast<std::size_t>(b)], cfg_.msa_heads,
                              cache != nullptr ? &local.blocks[static_cast<std::size_t>(b)]
                                               : nullptr);

    TokenBatch tokens = split_tokens(x);
    HeadOutput out = head_forward(tokens, pool_spec(), params_.head, training, dropout_seed,
                                  cache != nullptr ? &local.head : nullptr);
    if (cache != nullptr) {
        local.x_final = std::move(x);
        local.split = std::move(tokens);
        *cache = std::move(local);
    }
    return out;
}

ToyParams ToyModel::make_grad_store() const {
    ToyParams grads;
    auto zero_like_affine = [](const std::optional<Affine>& src, std::optional<Affine>& dst) {
        if (src.has_value()) {
            dst.emplace();
            dst->w = Matrix(src->w.rows(), src->w.cols());
            dst->b.assign(src->b.size(), 0.0);
        }
    };

    grads.embed.proj = Matrix(params_.embed.proj.rows(), params_.embed.proj.cols());
    grads.embed.proj_bias.assign(params_.embed.proj_bias.size(), 0.0);
    grads.embed.class_token.assign(params_.embed.class_token.size(), 0.0);
    grads.embed.pos = Matrix(params_.embed.pos.rows(), params_.embed.pos.cols());
    for (const auto& blk : params_.blocks) {
        BlockParams g;
        g.ln1.gain.assign(blk.ln1.gain.size(), 0.0);
        g.ln1.bias.assign(blk.ln1.bias.size(), 0.0);
        g.ln2.gain.assign(blk.ln2.gain.size(), 0.0);
        g.ln2.bias.assign(blk.ln2.bias.size(), 0.0);
        g.attn.wq = Matrix(blk.attn.wq.rows(), blk.attn.wq.cols());
        g.attn.wk = Matrix(blk.attn.wk.rows(), blk.attn.wk.cols());
        g.attn.wv = Matrix(blk.attn.wv.rows(), blk.attn.wv.cols());
        g.attn.wo = Matrix(blk.attn.wo.rows(), blk.attn.wo.cols());
        g.attn.bq.assign(blk.attn.bq.size(), 0.0);
        g.attn.bk.assign(blk.attn.bk.size(), 0.0);
        g.attn.bv.assign(blk.attn.bv.size(), 0.0);
        g.attn.bo.assign(blk.attn.bo.size(), 0.0);
        g.mlp.w1 = Matrix(blk.mlp.w1.rows(), blk.mlp.w1.cols());
        g.mlp.w2 = Matrix(blk.mlp.w2.rows(), blk.mlp.w2.cols());
        g.mlp.b1.assign(blk.mlp.b1.size(), 0.0);
        g.mlp.b2.assign(blk.mlp.b2.size(), 0.0);
        grads.blocks.push_back(std::move(g));
    }
    if (cfg_.pool == PoolKind::mgcrp && !cfg_.class_only) {
        grads.mgcrp.svpn = params_.mgcrp.svpn;
        for (const auto& h : params_.mgcrp.heads) {
            GcrpHeadParams g;
            g.w = Matrix(h.w.rows(), h.w.cols());
            g.r = Matrix(h.r.rows(), h.r.cols());
            grads.mgcrp.heads.push_back(std::move(g));
        }
    }
    grads.head.scheme = params_.head.scheme;
    grads.head.class_count = params_.head.class_count;
    grads.head.dropout_rate = params_.head.dropout_rate;
    zero_like_affine(params_.head.fc_class, grads.head.fc_class);
    zero_like_affine(params_.head.fc_words, grads.head.fc_words);
    zero_like_affine(params_.head.fc_joint, grads.head.fc_joint);
    return grads;
}

double ToyModel::loss_and_grads(const Matrix& sample, int label, double label_smoothing,
                                bool training, std::uint64_t dropout_seed,
                                ToyParams& grads) const {
    ModelCache cache;
    HeadOutput out = forward(sample, training, dropout_seed, &cache);
    const double loss = cross_entropy(out, static_cast<std::size_t>(label), label_smoothing);

    HeadGrads hg = head_loss_backward(cache.head, pool_spec(), params_.head,
                                      static_cast<std::size_t>(label), label_smoothing);

    // Head-level parameter gradients.
    auto add_affine = [](const std::optional<AffineGrads>& src, std::optional<Affine>& dst) {
        if (src.has_value() && dst.has_value()) {
            add_in_place(dst->w, src->d_w);
            for (std::size_t i = 0; i < dst->b.size(); ++i) dst->b[i] += src->d_b[i];
        }
    };
    add_affine(hg.d_fc_class, grads.head.fc_class);
    add_affine(hg.d_fc_words, grads.head.fc_words);
    add_affine(hg.d_fc_joint, grads.head.fc_joint);
    for (std::size_t h = 0; h < hg.d_pool_w.size(); ++h) {
        add_in_place(grads.mgcrp.heads[h].w, hg.d_pool_w[h]);
        add_in_place(grads.mgcrp.heads[h].r, hg.d_pool_r[h]);
    }

    // Token gradients back to the sequence: row 0 is the class token, the
    // word matrix transposes back to rows.
    const std::size_t p = static_cast<std::size_t>(cfg_.token_dim);
    const std::size_t t = cache.x_final.rows();
    Matrix d_x(t, p);
    for (std::size_t j = 0; j < p; ++j) d_x(0, j) = hg.d_class_token[j];
    for (std::size_t i = 1; i < t; ++i)
        for (std::size_t j = 0; j < p; ++j) d_x(i, j) = hg.d_words(j, i - 1);

    for (int b = cfg_.depth - 1; b >= 0; --b) {
        const auto bi = static_cast<std::size_t>(b);
        BlockGrads bg;
        bg.ln1.d_gain = std::move(grads.blocks[bi].ln1.gain);
        bg.ln1.d_bias = std::move(grads.blocks[bi].ln1.bias);
        bg.ln2.d_gain = std::move(grads.blocks[bi].ln2.gain);
        bg.ln2.d_bias = std::move(grads.blocks[bi].ln2.bias);
        bg.wq = {std::move(grads.blocks[bi].attn.wq), std::move(grads.blocks[bi].attn.bq)};
        bg.wk = {std::move(grads.blocks[bi].attn.wk), std::move(grads.blocks[bi].attn.bk)};
        bg.wv = {std::move(grads.blocks[bi].attn.wv), std::move(grads.blocks[bi].attn.bv)};
        bg.wo = {std::move(grads.blocks[bi].attn.wo), std::move(grads.blocks[bi].attn.bo)};
        bg.mlp1 = {std::move(grads.blocks[bi].mlp.w1), std::move(grads.blocks[bi].mlp.b1)};
        bg.mlp2 = {std::move(grads.blocks[bi].mlp.w2), std::move(grads.blocks[bi].mlp.b2)};

        d_x = transformer_block_backward(d_x, params_.blocks[bi], cfg_.msa_heads,
                                         cache.blocks[bi], bg);

        grads.blocks[bi].ln1.gain = std::move(bg.ln1.d_gain);
        grads.blocks[bi].ln1.bias = std::move(bg.ln1.d_bias);
        grads.blocks[bi].ln2.gain = std::move(bg.ln2.d_gain);
        grads.blocks[bi].ln2.bias = std::move(bg.ln2.d_bias);
        grads.blocks[bi].attn.wq = std::move(bg.wq.d_w);
        grads.blocks[bi].attn.bq = std::move(bg.wq.d_b);
        grads.blocks[bi].attn.wk = std::move(bg.wk.d_w);
        grads.blocks[bi].attn.bk = std::move(bg.wk.d_b);
        grads.blocks[bi].attn.wv = std::move(bg.wv.d_w);
        grads.blocks[bi].attn.bv = std::move(bg.wv.d_b);
        grads.blocks[bi].attn.wo = std::move(bg.wo.d_w);
        grads.blocks[bi].attn.bo = std::move(bg.wo.d_b);
        grads.blocks[bi].mlp.w1 = std::move(bg.mlp1.d_w);
        grads.blocks[bi].mlp.b1 = std::move(bg.mlp1.d_b);
        grads.blocks[bi].mlp.w2 = std::move(bg.mlp2.d_w);
        grads.blocks[bi].mlp.b2 = std::move(bg.mlp2.d_b);
    }

    // Embed backward: x0 row 0 = class_token + pos[0]; row i+1 = proj row + pos.
    add_in_place(grads.embed.pos, d_x);
    for (std::size_t j = 0; j < p; ++j) grads.embed.class_token[j] += d_x(0, j);
    const std::size_t q = static_cast<std::size_t>(cfg_.seq_len);
    Matrix d_rows(q, p);
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < p; ++j) d_rows(i, j) = d_x(i + 1, j);
    add_in_place(grads.embed.proj, matmul(cache.sample, d_rows)); // sample^T^T = sample
    {
        Vector cs = column_sums(d_rows);
        for (std::size_t j = 0; j < p; ++j) grads.embed.proj_bias[j] += cs[j];
    }
    return loss;
}

namespace {

int argmax(const Vector& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

} // namespace

double evaluate_accuracy(const ToyModel& model, const SynthDataset& data) {
    if (data.samples.empty()) return 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        HeadOutput out = model.forward(data.samples[i]);
        if (argmax(out.scores) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.samples.size());
}

std::string TrainReport::to_key_values() const {
    std::ostringstream out;
    out << "diverged=" << (diverged ? 1 : 0) << "\n";
    if (!diagnostic.empty()) out << "diagnostic=" << diagnostic << "\n";
    out << "steps_run=" << steps_run << "\n";
    out << "final_loss=" << format_double(final_loss) << "\n";
    out << "train_accuracy=" << format_double(train_accuracy) << "\n";
    out << "test_accuracy=" << format_double(test_accuracy) << "\n";
    return out.str();
}

TrainReport train(const ToyModelConfig& model_cfg, const SynthTaskSpec& task,
                  const TrainConfig& train_cfg, ToyModel* out_model) {
    TrainReport report;
    ToyModel model(model_cfg, model_cfg.seed);
    Rng root(model_cfg.seed);

    SynthTaskSpec train_task = task;
    train_task.seed = Rng::mix(task.seed ^ 0x7261696EULL); // distinct stream per split
    SynthTaskSpec test_task = task;
    test_task.seed = Rng::mix(task.seed ^ 0x74657374ULL);
    SynthDataset train_data = make_synth(train_task, train_cfg.train_count);
    SynthDataset test_data = make_synth(test_task, train_cfg.test_count);

    // AdamW state aligned with the parameter visit order.
    std::vector<std::vector<double>> m_state, v_state;
    for_each_param(model.config(), model.params(), [&](const std::string&, std::span<double> s) {
        m_state.emplace_back(s.size(), 0.0);
        v_state.emplace_back(s.size(), 0.0);
    });

    const int steps = train_cfg.steps;
    for (int step = 0; step < steps; ++step) {
        Rng batch_rng = root.split("batch", static_cast<std::uint64_t>(step));
        ToyParams grads = model.make_grad_store();
        double loss = 0.0;
        for (int b = 0; b < train_cfg.batch; ++b) {
            const std::size_t idx = static_cast<std::size_t>(
                batch_rng.uniform_index(train_data.samples.size()));
            const std::uint64_t dropout_seed =
                Rng::mix(model_cfg.seed ^ (static_cast<std::uint64_t>(step) << 20) ^
                         static_cast<std::uint64_t>(b));
            loss += model.loss_and_grads(train_data.samples[idx], train_data.labels[idx],
                                         train_cfg.label_smoothing, true, dropout_seed, grads);
        }
        const double inv_batch = 1.0 / static_cast<double>(train_cfg.batch);
        loss *= inv_batch;
        report.losses.push_back(loss);
        if (!std::isfinite(loss)) {
            report.diverged = true;
            report.diagnostic = "non-finite loss at step " + std::to_string(step);
            report.steps_run = step;
            report.final_loss = loss;
            if (out_model != nullptr) *out_model = model;
            return report;
        }

        // Cosine schedule from base_lr to final_lr across the step budget.
        const double frac = steps > 1 ? static_cast<double>(step) / static_cast<double>(steps - 1)
                                      : 0.0;
        const double lr = train_cfg.final_lr +
                          0.5 * (train_cfg.base_lr - train_cfg.final_lr) *
                              (1.0 + std::cos(3.14159265358979323846 * frac));
        const double t = static_cast<double>(step + 1);
        const double bias1 = 1.0 - std::pow(train_cfg.adam_beta1, t);
        const double bias2 = 1.0 - std::pow(train_cfg.adam_beta2, t);

        std::size_t slot = 0;
        std::vector<std::span<double>> grad_spans;
        for_each_param(model.config(), grads, [&](const std::string&, std::span<double> s) {
            grad_spans.push_back(s);
        });
        for_each_param(model.config(), model.params(),
                       [&](const std::string&, std::span<double> s) {
            std::span<double> g = grad_spans[slot];
            auto& m = m_state[slot];
            auto& v = v_state[slot];
            for (std::size_t i = 0; i < s.size(); ++i) {
                const double gi = g[i] * inv_batch;
                m[i] = train_cfg.adam_beta1 * m[i] + (1.0 - train_cfg.adam_beta1) * gi;
                v[i] = train_cfg.adam_beta2 * v[i] + (1.0 - train_cfg.adam_beta2) * gi * gi;
                const double m_hat = m[i] / bias1;
                const double v_hat = v[i] / bias2;
                s[i] -= lr * (m_hat / (std::sqrt(v_hat) + train_cfg.adam_eps) +
                              train_cfg.weight_decay * s[i]);
            }
            ++slot;
        });
        report.final_loss = loss;
    }

    report.steps_run = steps;
    report.train_accuracy = evaluate_accuracy(model, train_data);
    report.test_accuracy = evaluate_accuracy(model, test_data);
    if (out_model != nullptr) *out_model = model;
    return report;
}

} // namespace sot
