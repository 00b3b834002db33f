#pragma once

#include <vector>

#include "sot/linalg.hpp"
#include "sot/matrix.hpp"

namespace sot {

enum class SvpnMode { approx, exact };

/// Configuration for singular value power normalization. Defaults follow the
/// best operating point of the ablation study: alpha = 0.5 with a single
/// singular value and a single iteration in approximate mode.
struct SvpnConfig {
    double alpha = 0.5;
    int num_singular = 1; // r
    int iterations = 1;   // power iterations per singular value
    double eps = 1e-12;
    SvpnMode mode = SvpnMode::approx;

    void validate(std::size_t rows, std::size_t cols) const;
};

/// One estimated singular component: value with unit left/right vectors.
struct SingularTriple {
    double value = 0.0;
    Vector left;
    Vector right;
};

// -- exact svPN --------------------------------------------------------------

struct SvpnExactResult {
    Matrix normalized;  // sum_i lambda_i^alpha u_i v_i^T
    SvdFactors factors; // reused by the backward pass
};

/// Exact normalization via full SVD: raises each singular value to alpha
/// along its singular vectors. Values below eps contribute nothing.
SvpnExactResult svpn_exact(const Matrix& q, double alpha, double eps = 1e-12);

struct SvpnBackwardResult {
    Matrix grad_input; // dl/dQ
    bool degenerate = false; // some |lambda_i^2 - lambda_j^2| fell below gap_tol
};

/// Analytic backward of exact svPN, composed from the SVD-stage gradient and
/// the power-stage partials. K entries for (near-)tied singular values are
/// zeroed, with the tie reported through the degenerate flag. Wide inputs
/// (m < n) are handled through the transpose identity svPN(Q^T) = svPN(Q)^T.
SvpnBackwardResult svpn_exact_backward(const SvdFactors& factors, double alpha,
                                       const Matrix& grad_out, double gap_tol = 1e-8,
                                       double eps = 1e-12);

// -- power iteration and deflation -------------------------------------------

/// Alternating power iteration u <- Qv/|Qv|, v <- Q^T u/|Q^T u|; the value is
/// |Q^T u| after the final step. Throws DegenerateDirectionError when an
/// iterate lands in the null space (v0 orthogonal to the row space).
SingularTriple power_iterate(const Matrix& q, const Vector& v0, int iterations,
                             double eps = 1e-12);

/// Deterministic start vector: normalized all-ones.
Vector power_iteration_start(std::size_t n);

/// Q minus the accumulated rank-1 components of `triples`.
Matrix deflate(const Matrix& q, const std::vector<SingularTriple>& triples);

// -- approximate svPN ---------------------------------------------------------

/// Per-singular-value record of the unrolled power iteration, kept for the
/// backward pass. y[j] = M v[j], u[j+1] = y[j]/|y[j]|, z[j] = M^T u[j+1],
/// v[j+1] = z[j]/|z[j]|; the triple is (|z[last]|, u[last], v[last]).
struct PowerIterTrace {
    Vector v0;
    std::vector<Vector> y, u, z, v; // u[j], v[j+1] indexed per iteration j
    std::vector<double> y_norm, z_norm;
};

struct SvpnApproxCache {
    Matrix q;
    SvpnConfig cfg;
    std::vector<SingularTriple> triples;  // r entries
    std::vector<PowerIterTrace> traces;   // r entries
    std::vector<Matrix> deflated;         // deflated[i] fed triple i; deflated[0] = q
    Matrix output;
};

/// Approximate svPN: estimates r singular triples by repeated power iteration
/// and deflation, shrinks the leading r-1 components exactly and the residual
/// by 1/lambda_r^(1-alpha). With r = 1 this is Q / lambda_1^(1-alpha).
/// The all-ones start vector falls back to seeded pseudo-random unit vectors
/// if it happens to be a degenerate direction.
SvpnApproxCache svpn_approx_forward(const Matrix& q, const SvpnConfig& cfg);
Matrix svpn_approx(const Matrix& q, const SvpnConfig& cfg);

/// Gradient of the approximate normalization obtained by unrolling the
/// iteration: VJPs of the constituent products, normalizations, deflations,
/// and the final assembly, walked in reverse.
Matrix svpn_approx_backward(const SvpnApproxCache& cache, const Matrix& grad_out);

// -- baseline normalizers ------------------------------------------------------

struct MpnCache {
    EigFactors eig;
    double beta = 0.5;
    std::size_t dim = 0;
};

/// Matrix power normalization for SPD input: eigenvalues raised to beta along
/// eigenvectors.
Matrix mpn(const Matrix& p, double beta, MpnCache* cache = nullptr);

/// VJP of mpn for symmetric perturbations (Daleckii-Krein divided differences).
Matrix mpn_backward(const MpnCache& cache, const Matrix& grad_out, double eps = 1e-12);

/// Element-wise signed square root followed by l2 (Frobenius) normalization.
/// The zero matrix maps to itself.
Matrix epn(const Matrix& q);

/// Layer norm over the flattened matrix: one mean and one variance across all
/// entries, then gain*x + bias.
Matrix layer_norm_matrix(const Matrix& q, double gain, double bias, double eps = 1e-12);

/// Learnable positive scale 1/tau. tau is kept positive by storing an
/// unconstrained scalar s with tau = softplus(s) = log(1 + e^s).
struct AdaptiveScaleParam {
    double unconstrained = 0.0;

    static AdaptiveScaleParam from_tau(double tau);
    double tau() const;
    double dtau_dunconstrained() const;
};

Matrix adaptive_scale(const Matrix& q, const AdaptiveScaleParam& param);

struct AdaptiveScaleGrads {
    Matrix d_q;
    double d_tau = 0.0;
    double d_unconstrained = 0.0;
};

AdaptiveScaleGrads adaptive_scale_backward(const Matrix& q, const AdaptiveScaleParam& param,
                                           const Matrix& grad_out);

} // namespace sot
