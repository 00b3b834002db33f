#include "sot/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sot {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kOrthTol = 1e-15; // |g| <= tol*sqrt(a*b) counts as orthogonal

// Applies the deterministic output convention: order columns by singular
// value (descending, stable), then flip each (u_i, v_i) pair so the entry of
// largest magnitude in u_i is non-negative.
void canonicalize(SvdFactors& f) {
    const std::size_t k = f.singular_values.size();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return f.singular_values[a] > f.singular_values[b];
    });

    Matrix u(f.u.rows(), k), v(f.v.rows(), k);
    Vector s(k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t src = order[c];
        s[c] = f.singular_values[src];
        for (std::size_t i = 0; i < u.rows(); ++i) u(i, c) = f.u(i, src);
        for (std::size_t i = 0; i < v.rows(); ++i) v(i, c) = f.v(i, src);
    }
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < u.rows(); ++i) {
            const double a = std::fabs(u(i, c));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (u(arg, c) < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, c) = -u(i, c);
            for (std::size_t i = 0; i < v.rows(); ++i) v(i, c) = -v(i, c);
        }
    }
    f.u = std::move(u);
    f.v = std::move(v);
    f.singular_values = std::move(s);
}

// Fills column `col` of u with a unit vector orthogonal to all columns in
// `done`. Used to complete the basis when the input is rank deficient.
void complete_basis_column(Matrix& u, std::size_t col, const std::vector<std::size_t>& done) {
    const std::size_t m = u.rows();
    Vector best_candidate;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < m; ++e) {
        Vector cand(m, 0.0);
        cand[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t dc : done) {
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) proj += cand[i] * u(i, dc);
                for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * u(i, dc);
            }
        }
        const double n = norm2(cand);
        if (n > best_norm) {
            best_norm = n;
            best_candidate = std::move(cand);
        }
        if (best_norm > 0.9) break; // good enough; keeps the search deterministic and short
    }
    if (best_norm <= 1e-8) throw NumericError("svd: failed to complete orthonormal basis");
    for (std::size_t i = 0; i < m; ++i) u(i, col) = best_candidate[i] / best_norm;
}

// One-sided Jacobi on a tall-or-square matrix (m >= n): rotates column pairs
// of a working copy until all pairs are orthogonal, accumulating the
// rotations in V. Singular values are the final column norms.
SvdFactors svd_tall(const Matrix& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Matrix b = a;
    Matrix v = Matrix::identity(n);

    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += b(i, p) * b(i, p);
                    aqq += b(i, q) * b(i, q);
                    apq += b(i, p) * b(i, q);
                }
                if (std::fabs(apq) <= kOrthTol * std::sqrt(app * aqq)) continue;
                rotated = true;

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    if (sweep >= kMaxSweeps)
        throw NumericError("svd: one-sided Jacobi did not converge in " +
                           std::to_string(kMaxSweeps) + " sweeps (" + std::to_string(m) + "x" +
                           std::to_string(n) + ")");

    SvdFactors f;
    f.singular_values.assign(n, 0.0);
    f.u = Matrix(m, n);
    f.v = v;

    double smax = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double nrm = 0.0;
        for (std::size_t i = 0; i < m; ++i) nrm += b(i, j) * b(i, j);
        f.singular_values[j] = std::sqrt(nrm);
        smax = std::max(smax, f.singular_values[j]);
    }
    const double rank_tol = smax * 1e-14 * static_cast<double>(std::max(m, n));

    std::vector<std::size_t> done;
    std::vector<std::size_t> deficient;
    for (std::size_t j = 0; j < n; ++j) {
        if (f.singular_values[j] > rank_tol && f.singular_values[j] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) f.u(i, j) = b(i, j) / f.singular_values[j];
            done.push_back(j);
        } else {
            f.singular_values[j] = std::max(f.singular_values[j], 0.0);
            deficient.push_back(j);
        }
    }
    for (std::size_t j : deficient) {
        complete_basis_column(f.u, j, done);
        done.push_back(j);
    }

    canonicalize(f);
    return f;
}

} // namespace

SvdFactors svd(const Matrix& q) {
    if (q.rows() == 0 || q.cols() == 0) throw ShapeError("svd: empty matrix");
    ensure_finite(q, "svd");
    if (q.rows() >= q.cols()) return svd_tall(q);
    SvdFactors f = svd_tall(transpose(q));
    std::swap(f.u, f.v);
    canonicalize(f); // sign convention is defined on U of the original matrix
    return f;
}

Matrix svd_reconstruct(const SvdFactors& f) {
    Matrix us = f.u;
    for (std::size_t j = 0; j < f.singular_values.size(); ++j)
        for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= f.singular_values[j];
    return matmul(us, transpose(f.v));
}

EigFactors eigh_spd(const Matrix& p) {
    if (p.rows() != p.cols() || p.rows() == 0) throw DomainError("eigh_spd: matrix must be square");
    ensure_finite(p, "eigh_spd");
    const std::size_t n = p.rows();
    const double scale = std::max(1.0, max_abs(p));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::fabs(p(i, j) - p(j, i)) > 1e-10 * scale)
                throw DomainError("eigh_spd: input is not symmetric within tolerance");

    // Work on the symmetrized copy; classic cyclic Jacobi.
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (p(i, j) + p(j, i));
    Matrix e = Matrix::identity(n);

    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(off) <= 1e-15 * std::max(1.0, frobenius_norm(a))) break;

        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double aij = a(i, j);
                if (std::fabs(aij) <= 1e-300) continue;
                const double theta = (a(j, j) - a(i, i)) / (2.0 * aij);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t k = 0; k < n; ++k) {
                    const double aki = a(k, i), akj = a(k, j);
                    a(k, i) = c * aki - s * akj;
                    a(k, j) = s * aki + c * akj;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double aik = a(i, k), ajk = a(j, k);
                    a(i, k) = c * aik - s * ajk;
                    a(j, k) = s * aik + c * ajk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double eki = e(k, i), ekj = e(k, j);
                    e(k, i) = c * eki - s * ekj;
                    e(k, j) = s * eki + c * ekj;
                }
            }
        }
    }
    if (sweep >= kMaxSweeps) throw NumericError("eigh_spd: Jacobi did not converge");

    Vector values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);

    const double clamp_window = 1e-12 * scale;
    for (double& v : values) {
        if (v < -clamp_window)
            throw DomainError("eigh_spd: eigenvalue " + std::to_string(v) +
                              " below the PSD clamp window");
        if (v < 0.0) v = 0.0;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return values[x] > values[y]; });

    EigFactors f;
    f.values.resize(n);
    f.vectors = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        f.values[c] = values[order[c]];
        for (std::size_t i = 0; i < n; ++i) f.vectors(i, c) = e(i, order[c]);
    }
    // Deterministic sign: largest-magnitude entry of each eigenvector is
    // non-negative.
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = std::fabs(f.vectors(i, c));
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        if (f.vectors(arg, c) < 0.0)
            for (std::size_t i = 0; i < n; ++i) f.vectors(i, c) = -f.vectors(i, c);
    }
    return f;
}

Matrix eig_reconstruct(const EigFactors& f) {
    Matrix vs = f.vectors;
    for (std::size_t j = 0; j < f.values.size(); ++j)
        for (std::size_t i = 0; i < vs.rows(); ++i) vs(i, j) *= f.values[j];
    return matmul(vs, transpose(f.vectors));
}

} // namespace sot
