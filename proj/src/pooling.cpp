#include "sot/pooling.hpp"

#include <cmath>

namespace sot {

void TokenBatch::validate() const {
    if (class_token.empty() || words.rows() == 0 || words.cols() == 0)
        throw ShapeError("TokenBatch: p >= 1 and q >= 1 required");
    if (class_token.size() != words.rows())
        throw ShapeError("TokenBatch: class token length must equal the token dimension");
    ensure_finite(words, "TokenBatch");
    for (double x : class_token)
        if (!std::isfinite(x)) throw NumericError("TokenBatch: non-finite class token");
}

std::size_t MgcrpParams::representation_size() const {
    if (heads.empty()) return 0;
    return heads.size() * heads.front().w.rows() * heads.front().r.rows();
}

void MgcrpParams::validate(std::size_t token_dim) const {
    if (heads.empty()) throw ConfigError("mgcrp: at least one head required");
    const std::size_t m = heads.front().w.rows();
    const std::size_t n = heads.front().r.rows();
    for (const auto& h : heads) {
        if (h.w.rows() != m || h.r.rows() != n)
            throw ConfigError("mgcrp: all heads must share (m, n)");
        if (h.w.cols() != token_dim || h.r.cols() != token_dim)
            throw ShapeError("mgcrp: projection width must equal the token dimension");
    }
    svpn.validate(m, n);
}

MgcrpParams make_mgcrp_params(std::size_t heads, std::size_t m, std::size_t n,
                              std::size_t token_dim, const SvpnConfig& svpn, Rng rng) {
    MgcrpParams params;
    params.svpn = svpn;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(token_dim));
    for (std::size_t h = 0; h < heads; ++h) {
        GcrpHeadParams head;
        head.w = Matrix(m, token_dim);
        head.r = Matrix(n, token_dim);
        Rng wrng = rng.split("mgcrp/w", h);
        Rng rrng = rng.split("mgcrp/r", h);
        for (std::size_t i = 0; i < head.w.size(); ++i) head.w.data()[i] = wrng.gaussian(0.0, stddev);
        for (std::size_t i = 0; i < head.r.size(); ++i) head.r.data()[i] = rrng.gaussian(0.0, stddev);
        params.heads.push_back(std::move(head));
    }
    return params;
}

Vector gap(const Matrix& z) {
    if (z.rows() == 0 || z.cols() == 0) throw ShapeError("gap: empty input");
    ensure_finite(z, "gap");
    Vector out(z.rows(), 0.0);
    const double inv_q = 1.0 / static_cast<double>(z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) s += z(i, j);
        out[i] = s * inv_q;
    }
    return out;
}

Matrix gap_backward(const Vector& grad_out, std::size_t p, std::size_t q) {
    if (grad_out.size() != p) throw ContractError("gap_backward: gradient length mismatch");
    Matrix d(p, q);
    const double inv_q = 1.0 / static_cast<double>(q);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) d(i, j) = grad_out[i] * inv_q;
    return d;
}

Matrix gcp(const Matrix& z, double beta, GcpCache* cache) {
    if (z.rows() == 0 || z.cols() == 0) throw ShapeError("gcp: empty input");
    ensure_finite(z, "gcp");
    Matrix cov = scale(matmul(z, transpose(z)), 1.0 / static_cast<double>(z.cols()));
    MpnCache mpn_cache;
    Matrix out = mpn(cov, beta, &mpn_cache);
    if (cache != nullptr) {
        cache->z = z;
        cache->covariance = std::move(cov);
        cache->mpn = std::move(mpn_cache);
    }
    return out;
}

Matrix gcp_backward(const GcpCache& cache, const Matrix& grad_out) {
    const std::size_t p = cache.z.rows(), q = cache.z.cols();
    if (grad_out.rows() != p || grad_out.cols() != p)
        throw ContractError("gcp_backward: gradient shape mismatch");
    Matrix d_cov = mpn_backward(cache.mpn, grad_out);
    // P = (1/q) Z Z^T with d_cov symmetric: dZ = (2/q) d_cov Z.
    return scale(matmul(d_cov, cache.z), 2.0 / static_cast<double>(q));
}

Matrix gcrp(const Matrix& z, const GcrpHeadParams& head, const SvpnConfig& svpn,
            GcrpCache* cache) {
    if (head.w.cols() != z.rows() || head.r.cols() != z.rows())
        throw ShapeError("gcrp: projection width must equal the token dimension");
    ensure_finite(z, "gcrp");
    const double inv_q = 1.0 / static_cast<double>(z.cols());
    Matrix x = matmul(head.w, z);
    Matrix y = matmul(head.r, z);
    Matrix q = scale(matmul(x, transpose(y)), inv_q);
    svpn.validate(q.rows(), q.cols());

    Matrix out;
    GcrpCache local;
    if (svpn.mode == SvpnMode::exact) {
        SvpnExactResult res = svpn_exact(q, svpn.alpha, svpn.eps);
        out = std::move(res.normalized);
        local.exact_factors = std::move(res.factors);
    } else {
        local.approx_cache = svpn_approx_forward(q, svpn);
        out = local.approx_cache.output;
    }
    if (cache != nullptr) {
        local.z = z;
        local.x = std::move(x);
        local.y = std::move(y);
        local.q = std::move(q);
        local.mode = svpn.mode;
        local.alpha = svpn.alpha;
        local.eps = svpn.eps;
        *cache = std::move(local);
    }
    return out;
}

GcrpGrads gcrp_backward(const GcrpCache& cache, const GcrpHeadParams& head,
                        const Matrix& grad_out) {
    if (cache.z.empty()) throw ContractError("gcrp_backward: empty cache");
    if (grad_out.rows() != head.w.rows() || grad_out.cols() != head.r.rows())
        throw ContractError("gcrp_backward: gradient shape mismatch");

    GcrpGrads grads;
    Matrix d_q;
    if (cache.mode == SvpnMode::exact) {
        SvpnBackwardResult res =
            svpn_exact_backward(cache.exact_factors, cache.alpha, grad_out, 1e-8, cache.eps);
        d_q = std::move(res.grad_input);
        grads.degenerate = res.degenerate;
    } else {
        d_q = svpn_approx_backward(cache.approx_cache, grad_out);
    }

    const double inv_q = 1.0 / static_cast<double>(cache.z.cols());
    Matrix d_x = scale(matmul(d_q, cache.y), inv_q);
    Matrix d_y = scale(matmul(transpose(d_q), cache.x), inv_q);
    grads.d_w = matmul(d_x, transpose(cache.z));
    grads.d_r = matmul(d_y, transpose(cache.z));
    grads.d_z = add(matmul(transpose(head.w), d_x), matmul(transpose(head.r), d_y));
    return grads;
}

Vector mgcrp(const Matrix& z, const MgcrpParams& params, MgcrpCache* cache) {
    params.validate(z.rows());
    Vector out;
    out.reserve(params.representation_size());
    if (cache != nullptr) {
        cache->heads.clear();
        cache->token_count = z.cols();
    }
    for (const auto& head : params.heads) {
        GcrpCache head_cache;
        Matrix pooled = gcrp(z, head, params.svpn, cache != nullptr ? &head_cache : nullptr);
        out.insert(out.end(), pooled.storage().begin(), pooled.storage().end());
        if (cache != nullptr) cache->heads.push_back(std::move(head_cache));
    }
    return out;
}

MgcrpGrads mgcrp_backward(const MgcrpCache& cache, const MgcrpParams& params,
                          const Vector& grad_out) {
    if (cache.heads.size() != params.heads.size())
        throw ContractError("mgcrp_backward: cache does not match the parameters");
    if (grad_out.size() != params.representation_size())
        throw ContractError("mgcrp_backward: gradient length mismatch");

    MgcrpGrads grads;
    std::size_t offset = 0;
    for (std::size_t h = 0; h < params.heads.size(); ++h) {
        const std::size_t m = params.heads[h].w.rows();
        const std::size_t n = params.heads[h].r.rows();
        Matrix g(m, n);
        for (std::size_t i = 0; i < m * n; ++i) g.data()[i] = grad_out[offset + i];
        offset += m * n;

        GcrpGrads hg = gcrp_backward(cache.heads[h], params.heads[h], g);
        grads.degenerate = grads.degenerate || hg.degenerate;
        if (grads.d_z.empty()) grads.d_z = std::move(hg.d_z);
        else add_in_place(grads.d_z, hg.d_z);
        grads.d_w.push_back(std::move(hg.d_w));
        grads.d_r.push_back(std::move(hg.d_r));
    }
    return grads;
}

const char* pool_kind_name(PoolKind kind) {
    switch (kind) {
        case PoolKind::gap: return "gap";
        case PoolKind::gcp: return "gcp";
        case PoolKind::mgcrp: return "mgcrp";
    }
    return "?";
}

PoolKind pool_kind_from_name(const std::string& name) {
    if (name == "gap") return PoolKind::gap;
    if (name == "gcp") return PoolKind::gcp;
    if (name == "mgcrp") return PoolKind::mgcrp;
    throw ConfigError("unknown pooling method: " + name);
}

std::size_t PoolSpec::output_size(std::size_t token_dim) const {
    switch (kind) {
        case PoolKind::gap: return token_dim;
        case PoolKind::gcp: return token_dim * token_dim;
        case PoolKind::mgcrp:
            if (mgcrp == nullptr) throw ConfigError("pool: mgcrp selected without parameters");
            return mgcrp->representation_size();
    }
    throw ConfigError("pool: bad kind");
}

Vector pool_forward(const Matrix& tokens, const PoolSpec& spec, PoolingCache* cache) {
    Vector out;
    PoolingCache local;
    local.kind = spec.kind;
    local.token_dim = tokens.rows();
    local.token_count = tokens.cols();
    switch (spec.kind) {
        case PoolKind::gap:
            out = gap(tokens);
            break;
        case PoolKind::gcp: {
            Matrix pooled = gcp(tokens, spec.mpn_beta, cache != nullptr ? &local.gcp : nullptr);
            out = pooled.storage();
            break;
        }
        case PoolKind::mgcrp: {
            if (spec.mgcrp == nullptr) throw ConfigError("pool: mgcrp selected without parameters");
            out = mgcrp(tokens, *spec.mgcrp, cache != nullptr ? &local.mgcrp : nullptr);
            break;
        }
    }
    local.output_size = out.size();
    if (cache != nullptr) *cache = std::move(local);
    return out;
}

PoolingGradients pooling_backward(const PoolingCache& cache, const PoolSpec& spec,
                                  const Vector& grad_out) {
    if (cache.kind != spec.kind)
        throw ContractError("pooling_backward: cache kind does not match the spec");
    if (grad_out.size() != cache.output_size)
        throw ContractError("pooling_backward: gradient length mismatch");

    PoolingGradients grads;
    switch (cache.kind) {
        case PoolKind::gap:
            grads.d_tokens = gap_backward(grad_out, cache.token_dim, cache.token_count);
            break;
        case PoolKind::gcp: {
            Matrix g(cache.token_dim, cache.token_dim);
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = grad_out[i];
            grads.d_tokens = gcp_backward(cache.gcp, g);
            break;
        }
        case PoolKind::mgcrp: {
            if (spec.mgcrp == nullptr)
                throw ContractError("pooling_backward: mgcrp parameters missing");
            MgcrpGrads mg = mgcrp_backward(cache.mgcrp, *spec.mgcrp, grad_out);
            grads.d_tokens = std::move(mg.d_z);
            grads.d_w = std::move(mg.d_w);
            grads.d_r = std::move(mg.d_r);
            grads.degenerate = mg.degenerate;
            break;
        }
    }
    return grads;
}

} // namespace sot
