#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sot/normalization.hpp"
#include "sot/rng.hpp"

namespace sot {

/// Classification token z0 plus the word-token matrix Z (p x q, tokens as
/// columns).
struct TokenBatch {
    Vector class_token;
    Matrix words;

    void validate() const;
};

/// Projections of one cross-covariance head: W is m x p, R is n x p.
struct GcrpHeadParams {
    Matrix w;
    Matrix r;
};

/// Multi-head cross-covariance pooling parameters. All heads share (m, n);
/// the representation size is heads * m * n.
struct MgcrpParams {
    std::vector<GcrpHeadParams> heads;
    SvpnConfig svpn;

    std::size_t representation_size() const;
    void validate(std::size_t token_dim) const;
};

/// Seeded Gaussian init with std 1/sqrt(p) for the W/R projections.
MgcrpParams make_mgcrp_params(std::size_t heads, std::size_t m, std::size_t n,
                              std::size_t token_dim, const SvpnConfig& svpn, Rng rng);

// -- forward ---------------------------------------------------------------

/// Global average pooling: row means (1/q) Z 1.
Vector gap(const Matrix& z);

/// Adjoint of gap: spreads each entry of the output gradient across the
/// columns, divided by q.
Matrix gap_backward(const Vector& grad_out, std::size_t p, std::size_t q);

struct GcpCache {
    Matrix z;
    Matrix covariance; // (1/q) Z Z^T
    MpnCache mpn;
};

/// Global covariance pooling: mpn((1/q) Z Z^T, beta). Output is p x p SPD.
Matrix gcp(const Matrix& z, double beta, GcpCache* cache = nullptr);

Matrix gcp_backward(const GcpCache& cache, const Matrix& grad_out);

struct GcrpCache {
    Matrix z, x, y, q; // X = WZ, Y = RZ, Q = (1/q) X Y^T
    SvpnMode mode = SvpnMode::approx;
    double alpha = 0.5;
    double eps = 1e-12;
    SvdFactors exact_factors;      // populated in exact mode
    SvpnApproxCache approx_cache;  // populated in approximate mode
};

/// Single-head global cross-covariance pooling: svPN((1/q) W Z Z^T R^T),
/// exact or approximate per the config's mode flag. Output is m x n.
Matrix gcrp(const Matrix& z, const GcrpHeadParams& head, const SvpnConfig& svpn,
            GcrpCache* cache = nullptr);

struct GcrpGrads {
    Matrix d_z, d_w, d_r;
    bool degenerate = false;
};

GcrpGrads gcrp_backward(const GcrpCache& cache, const GcrpHeadParams& head,
                        const Matrix& grad_out);

struct MgcrpCache {
    std::vector<GcrpCache> heads;
    std::size_t token_count = 0;
};

/// Multi-head pooling: the per-head m x n outputs flattened row-major and
/// concatenated in head order. Length is heads * m * n.
Vector mgcrp(const Matrix& z, const MgcrpParams& params, MgcrpCache* cache = nullptr);

struct MgcrpGrads {
    Matrix d_z;
    std::vector<Matrix> d_w, d_r;
    bool degenerate = false;
};

MgcrpGrads mgcrp_backward(const MgcrpCache& cache, const MgcrpParams& params,
                          const Vector& grad_out);

// -- unified pooled-vector interface (used by the classification head) -------

enum class PoolKind { gap, gcp, mgcrp };

const char* pool_kind_name(PoolKind kind);
PoolKind pool_kind_from_name(const std::string& name);

/// Pooling selector plus the parameters of the selected method.
struct PoolSpec {
    PoolKind kind = PoolKind::mgcrp;
    double mpn_beta = 0.5;          // gcp only
    const MgcrpParams* mgcrp = nullptr; // mgcrp only

    std::size_t output_size(std::size_t token_dim) const;
};

struct PoolingCache {
    PoolKind kind = PoolKind::gap;
    std::size_t token_dim = 0, token_count = 0;
    std::size_t output_size = 0;
    GcpCache gcp;
    MgcrpCache mgcrp;
};

struct PoolingGradients {
    Matrix d_tokens;
    std::vector<Matrix> d_w, d_r; // mgcrp projections, empty otherwise
    bool degenerate = false;
};

/// Pools the token matrix into a flat vector (matrices flattened row-major).
Vector pool_forward(const Matrix& tokens, const PoolSpec& spec, PoolingCache* cache = nullptr);

/// Routes the flat gradient back through the pooling recorded in `cache`.
/// Throws ContractError if the gradient or parameters do not match the cache.
PoolingGradients pooling_backward(const PoolingCache& cache, const PoolSpec& spec,
                                  const Vector& grad_out);

} // namespace sot
