#pragma once

#include "sot/matrix.hpp"

namespace sot {

/// Thin SVD of an m x n matrix: U is m x k, V is n x k, k = min(m, n).
/// Columns of U and V are orthonormal; singular values are non-negative and
/// non-increasing. Sign convention: within each (u_i, v_i) pair, the entry of
/// largest magnitude in u_i is non-negative (first such entry on ties), so
/// the factorization is deterministic.
struct SvdFactors {
    Matrix u;
    Vector singular_values;
    Matrix v;
};

/// Eigendecomposition of a symmetric PSD matrix: vectors is d x d orthonormal,
/// values are non-increasing. Negative eigenvalues within round-off of zero
/// are clamped to zero.
struct EigFactors {
    Matrix vectors;
    Vector values;
};

/// One-sided Jacobi SVD. Throws NumericError if the sweep cap is exceeded.
SvdFactors svd(const Matrix& q);

/// Reassemble U * diag(s) * V^T.
Matrix svd_reconstruct(const SvdFactors& f);

/// Cyclic Jacobi eigendecomposition for symmetric positive semi-definite
/// input. Throws DomainError on asymmetry beyond 1e-10 (relative to the
/// largest entry) or on eigenvalues below the -1e-12 clamp window.
EigFactors eigh_spd(const Matrix& p);

Matrix eig_reconstruct(const EigFactors& f);

} // namespace sot
