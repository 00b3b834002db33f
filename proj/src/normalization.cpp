#include "sot/normalization.hpp"

#include <cmath>
#include <string>

#include "sot/rng.hpp"

namespace sot {

void SvpnConfig::validate(std::size_t rows, std::size_t cols) const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("svpn: alpha must be in (0, 1]");
    if (num_singular < 1) throw ConfigError("svpn: num_singular must be positive");
    if (iterations < 1) throw ConfigError("svpn: iterations must be positive");
    if (eps <= 0.0) throw ConfigError("svpn: eps must be positive");
    if (static_cast<std::size_t>(num_singular) > std::min(rows, cols))
        throw ConfigError("svpn: num_singular exceeds min(rows, cols)");
}

SvpnExactResult svpn_exact(const Matrix& q, double alpha, double eps) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("svpn_exact: alpha must be in (0, 1]");
    ensure_finite(q, "svpn_exact");
    SvpnExactResult res;
    res.factors = svd(q);
    res.normalized = Matrix(q.rows(), q.cols());
    const std::size_t k = res.factors.singular_values.size();
    for (std::size_t i = 0; i < k; ++i) {
        const double lam = res.factors.singular_values[i];
        if (lam < eps) continue; // shrunk to zero
        const double w = std::pow(lam, alpha);
        for (std::size_t r = 0; r < q.rows(); ++r) {
            const double uw = res.factors.u(r, i) * w;
            for (std::size_t c = 0; c < q.cols(); ++c)
                res.normalized(r, c) += uw * res.factors.v(c, i);
        }
    }
    return res;
}

namespace {

// Corollary backward for the tall/square orientation (rows >= cols). The
// composed map is  Q -> U diag(lambda^alpha) V^T  with thin factors; V is
// square here so every gradient component is representable.
SvpnBackwardResult svpn_backward_tall(const SvdFactors& f, double alpha, const Matrix& g,
                                      double gap_tol, double eps) {
    const std::size_t k = f.singular_values.size();
    const Vector& lam = f.singular_values;

    Vector lam_alpha(k), lam_inv(k), lam_alpha_m1(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double l = std::max(lam[i], eps); // floors the unbounded powers at eps
        lam_alpha[i] = std::pow(l, alpha);
        lam_inv[i] = 1.0 / l;
        lam_alpha_m1[i] = std::pow(l, alpha - 1.0);
    }

    // Power-stage partials.
    Matrix d_u = matmul(g, f.v); // m x k, columns scaled below
    for (std::size_t r = 0; r < d_u.rows(); ++r)
        for (std::size_t c = 0; c < k; ++c) d_u(r, c) *= lam_alpha[c];
    Matrix d_v = matmul(transpose(g), f.u);
    for (std::size_t r = 0; r < d_v.rows(); ++r)
        for (std::size_t c = 0; c < k; ++c) d_v(r, c) *= lam_alpha[c];
    Matrix utgv = matmul(transpose(f.u), matmul(g, f.v)); // k x k

    // SVD-stage composition.
    // term1 = dU Lambda^-1 V^T
    Matrix du_li = d_u;
    for (std::size_t r = 0; r < du_li.rows(); ++r)
        for (std::size_t c = 0; c < k; ++c) du_li(r, c) *= lam_inv[c];
    Matrix result = matmul(du_li, transpose(f.v));

    // term2 = U (dLambda - U^T dU Lambda^-1)_diag V^T
    Matrix ut_du = matmul(transpose(f.u), d_u);
    Vector diag_term(k);
    for (std::size_t i = 0; i < k; ++i)
        diag_term[i] = alpha * lam_alpha_m1[i] * utgv(i, i) - ut_du(i, i) * lam_inv[i];
    Matrix mid(k, k);
    for (std::size_t i = 0; i < k; ++i) mid(i, i) = diag_term[i];
    add_in_place(result, matmul(f.u, matmul(mid, transpose(f.v))));

    // term3 = 2 U Lambda (K^T o (V^T (dV - V Lambda^-1 dU^T U Lambda)))_sym V^T
    Matrix dut_u = matmul(transpose(d_u), f.u); // k x k
    Matrix corr(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) corr(i, j) = lam_inv[i] * dut_u(i, j) * lam[j];
    Matrix inner = matmul(transpose(f.v), sub(d_v, matmul(f.v, corr))); // k x k

    bool degenerate = false;
    Matrix h(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const double gap = lam[j] * lam[j] - lam[i] * lam[i]; // K^T entry: K_ji
            if (std::fabs(gap) < gap_tol) {
                degenerate = true;
                continue; // K_ij = 0 at ties
            }
            h(i, j) = inner(i, j) / gap;
        }
    }
    Matrix h_sym(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) h_sym(i, j) = 0.5 * (h(i, j) + h(j, i));
    Matrix lam_h(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) lam_h(i, j) = 2.0 * lam[i] * h_sym(i, j);
    add_in_place(result, matmul(f.u, matmul(lam_h, transpose(f.v))));

    return {std::move(result), degenerate};
}

} // namespace

SvpnBackwardResult svpn_exact_backward(const SvdFactors& factors, double alpha,
                                       const Matrix& grad_out, double gap_tol, double eps) {
    const std::size_t m = factors.u.rows();
    const std::size_t n = factors.v.rows();
    if (grad_out.rows() != m || grad_out.cols() != n)
        throw ShapeError("svpn_exact_backward: grad_out shape does not match the factors");
    ensure_finite(grad_out, "svpn_exact_backward");

    if (m >= n) return svpn_backward_tall(factors, alpha, grad_out, gap_tol, eps);

    // Wide input: svPN commutes with transposition, so run the tall-case
    // formula on Q^T (factors swapped) and transpose the gradient back.
    SvdFactors swapped{factors.v, factors.singular_values, factors.u};
    SvpnBackwardResult res = svpn_backward_tall(swapped, alpha, transpose(grad_out), gap_tol, eps);
    res.grad_input = transpose(res.grad_input);
    return res;
}

Vector power_iteration_start(std::size_t n) {
    if (n == 0) throw ShapeError("power_iteration_start: empty dimension");
    return Vector(n, 1.0 / std::sqrt(static_cast<double>(n)));
}

SingularTriple power_iterate(const Matrix& q, const Vector& v0, int iterations, double eps) {
    if (iterations < 1) throw ConfigError("power_iterate: iterations must be positive");
    if (v0.size() != q.cols()) throw ShapeError("power_iterate: v0 length must equal cols");
    ensure_finite(q, "power_iterate");
    if (frobenius_norm(q) == 0.0)
        throw DegenerateDirectionError("power_iterate: zero matrix has no dominant direction");
    if (std::fabs(norm2(v0) - 1.0) > 1e-8)
        throw ConfigError("power_iterate: v0 must be a unit vector");

    Vector v = v0, u;
    double value = 0.0;
    for (int j = 0; j < iterations; ++j) {
        Vector y = matvec(q, v);
        const double ny = norm2(y);
        if (ny < eps)
            throw DegenerateDirectionError(
                "power_iterate: iterate fell into the null space (|Qv| < eps)");
        u = scaled(y, 1.0 / ny);

        Vector z = matvec_transposed(q, u);
        const double nz = norm2(z);
        if (nz < eps)
            throw DegenerateDirectionError(
                "power_iterate: iterate fell into the null space (|Q^T u| < eps)");
        v = scaled(z, 1.0 / nz);
        value = nz;
    }

    // Same pair-sign convention as svd(): largest-magnitude entry of the left
    // vector is non-negative. lambda u v^T is unchanged.
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (std::fabs(u[i]) > best) {
            best = std::fabs(u[i]);
            arg = i;
        }
    if (u[arg] < 0.0) {
        for (double& x : u) x = -x;
        for (double& x : v) x = -x;
    }
    return {value, std::move(u), std::move(v)};
}

Matrix deflate(const Matrix& q, const std::vector<SingularTriple>& triples) {
    if (triples.empty()) throw ContractError("deflate: triples must be non-empty");
    Matrix r = q;
    for (const auto& t : triples) {
        if (t.left.size() != q.rows() || t.right.size() != q.cols())
            throw ShapeError("deflate: triple shape does not match the matrix");
        for (std::size_t i = 0; i < q.rows(); ++i)
            for (std::size_t j = 0; j < q.cols(); ++j) r(i, j) -= t.value * t.left[i] * t.right[j];
    }
    return r;
}

namespace {

// Runs power iteration with the deterministic all-ones start, falling back to
// seeded pseudo-random unit vectors when that direction is degenerate.
SingularTriple power_iterate_with_fallback(const Matrix& m, int iterations, double eps,
                                           PowerIterTrace* trace) {
    auto run = [&](const Vector& v0) {
        if (trace == nullptr) return power_iterate(m, v0, iterations, eps);
        // Traced variant: record every intermediate for the unrolled backward.
        trace->v0 = v0;
        trace->y.clear();
        trace->u.clear();
        trace->z.clear();
        trace->v.clear();
        trace->y_norm.clear();
        trace->z_norm.clear();
        Vector v = v0, u;
        double value = 0.0;
        for (int j = 0; j < iterations; ++j) {
            Vector y = matvec(m, v);
            const double ny = norm2(y);
            if (ny < eps)
                throw DegenerateDirectionError("power_iterate: |Qv| < eps");
            u = scaled(y, 1.0 / ny);
            Vector z = matvec_transposed(m, u);
            const double nz = norm2(z);
            if (nz < eps)
                throw DegenerateDirectionError("power_iterate: |Q^T u| < eps");
            v = scaled(z, 1.0 / nz);
            value = nz;
            trace->y.push_back(std::move(y));
            trace->u.push_back(u);
            trace->z.push_back(std::move(z));
            trace->v.push_back(v);
            trace->y_norm.push_back(ny);
            trace->z_norm.push_back(nz);
        }
        // No sign flip here: the trace must match the emitted triple exactly.
        return SingularTriple{value, u, v};
    };

    try {
        return run(power_iteration_start(m.cols()));
    } catch (const DegenerateDirectionError&) {
        for (std::uint64_t attempt = 0; attempt < 4; ++attempt) {
            Rng rng(Rng::mix(0x5076314E5F763000ULL + attempt)); // fixed fallback stream
            Vector v0(m.cols());
            for (double& x : v0) x = rng.gaussian();
            const double n = norm2(v0);
            if (n == 0.0) continue;
            for (double& x : v0) x /= n;
            try {
                return run(v0);
            } catch (const DegenerateDirectionError&) {
                continue;
            }
        }
        throw;
    }
}

} // namespace

SvpnApproxCache svpn_approx_forward(const Matrix& q, const SvpnConfig& cfg) {
    cfg.validate(q.rows(), q.cols());
    ensure_finite(q, "svpn_approx");

    SvpnApproxCache cache;
    cache.q = q;
    cache.cfg = cfg;

    const int r = cfg.num_singular;
    Matrix m = q;
    for (int i = 0; i < r; ++i) {
        // lambda_i <= |M_i|_F, so a vanished deflated matrix means the r-th
        // singular value is below eps and the final division is impossible.
        if (frobenius_norm(m) < cfg.eps)
            throw NearSingularError("svpn_approx: residual spectrum below eps at value " +
                                    std::to_string(i + 1) + " of " + std::to_string(r));
        cache.deflated.push_back(m);
        PowerIterTrace trace;
        SingularTriple t = power_iterate_with_fallback(m, cfg.iterations, cfg.eps, &trace);
        cache.traces.push_back(std::move(trace));
        if (i + 1 < r) {
            for (std::size_t a = 0; a < m.rows(); ++a)
                for (std::size_t b = 0; b < m.cols(); ++b)
                    m(a, b) -= t.value * t.left[a] * t.right[b];
        }
        cache.triples.push_back(std::move(t));
    }

    const double lam_r = cache.triples.back().value;
    if (lam_r < cfg.eps)
        throw NearSingularError("svpn_approx: lambda_r = " + std::to_string(lam_r) +
                                " is below eps; cannot divide");

    // Leading r-1 components shrunk exactly; residual scaled by
    // 1/lambda_r^(1-alpha). Computed as a division so the r = 1 case is
    // literally Q / lambda_1^(1-alpha).
    const double denom = std::pow(lam_r, 1.0 - cfg.alpha);
    Matrix out(q.rows(), q.cols());
    const Matrix& residual = (r == 1) ? cache.q : m;
    for (std::size_t a = 0; a < q.rows(); ++a)
        for (std::size_t b = 0; b < q.cols(); ++b) out(a, b) = residual(a, b) / denom;
    for (int i = 0; i + 1 < r; ++i) {
        const auto& t = cache.triples[static_cast<std::size_t>(i)];
        const double w = std::pow(t.value, cfg.alpha);
        for (std::size_t a = 0; a < q.rows(); ++a)
            for (std::size_t b = 0; b < q.cols(); ++b) out(a, b) += w * t.left[a] * t.right[b];
    }
    cache.output = std::move(out);
    return cache;
}

Matrix svpn_approx(const Matrix& q, const SvpnConfig& cfg) {
    return svpn_approx_forward(q, cfg).output;
}

namespace {

// VJP of x -> x/|x|:  g -> (g - (g.n) n)/|x|  with n = x/|x|.
Vector normalize_vjp(const Vector& unit, double norm, const Vector& g) {
    const double gn = dot(g, unit);
    Vector out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = (g[i] - gn * unit[i]) / norm;
    return out;
}

// Backward through one traced power iteration on matrix M. Adds the matrix
// contribution to d_m given output gradients (d_value, d_left, d_right).
void power_iterate_backward(const Matrix& m, const PowerIterTrace& trace, double d_value,
                            Vector d_left, Vector d_right, Matrix& d_m) {
    const int iters = static_cast<int>(trace.y.size());
    // Seed: value = |z[last]|, left = u[last], right = v[last].
    Vector du = std::move(d_left);
    Vector dv = std::move(d_right);
    Vector dz(m.cols(), 0.0);
    if (d_value != 0.0) axpy(dz, d_value, trace.v[static_cast<std::size_t>(iters - 1)]);

    for (int j = iters - 1; j >= 0; --j) {
        const auto ju = static_cast<std::size_t>(j);
        // v[j+1] = z[j]/|z[j]|
        {
            Vector from_v = normalize_vjp(trace.v[ju], trace.z_norm[ju], dv);
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += from_v[i];
        }
        // z[j] = M^T u[j+1]
        for (std::size_t a = 0; a < m.rows(); ++a)
            for (std::size_t b = 0; b < m.cols(); ++b) d_m(a, b) += trace.u[ju][a] * dz[b];
        Vector du_from_z = matvec(m, dz);
        for (std::size_t i = 0; i < du.size(); ++i) du[i] += du_from_z[i];
        // u[j+1] = y[j]/|y[j]|
        Vector dy = normalize_vjp(trace.u[ju], trace.y_norm[ju], du);
        // y[j] = M v[j]  (v[0] = v0 is a constant)
        const Vector& vj = (j == 0) ? trace.v0 : trace.v[ju - 1];
        for (std::size_t a = 0; a < m.rows(); ++a)
            for (std::size_t b = 0; b < m.cols(); ++b) d_m(a, b) += dy[a] * vj[b];
        if (j > 0) {
            dv = matvec_transposed(m, dy);
            du.assign(m.rows(), 0.0);
            dz.assign(m.cols(), 0.0);
        }
    }
}

} // namespace

Matrix svpn_approx_backward(const SvpnApproxCache& cache, const Matrix& grad_out) {
    if (!grad_out.same_shape(cache.output))
        throw ContractError("svpn_approx_backward: grad shape does not match the cached forward");
    ensure_finite(grad_out, "svpn_approx_backward");

    const int r = cache.cfg.num_singular;
    const double alpha = cache.cfg.alpha;
    const std::size_t rows = cache.q.rows(), cols = cache.q.cols();

    // Output-stage gradients on the triples and on the residual matrix.
    std::vector<double> d_value(static_cast<std::size_t>(r), 0.0);
    std::vector<Vector> d_left(static_cast<std::size_t>(r), Vector(rows, 0.0));
    std::vector<Vector> d_right(static_cast<std::size_t>(r), Vector(cols, 0.0));

    const Matrix& residual = cache.deflated.back(); // M_r = Q - sum_{i<r} components
    const double lam_r = cache.triples.back().value;
    const double denom = std::pow(lam_r, 1.0 - alpha);

    // d/d(residual) of residual/denom.
    Matrix d_m(rows, cols);
    for (std::size_t i = 0; i < d_m.size(); ++i) d_m.data()[i] = grad_out.data()[i] / denom;

    // d/d(lambda_r): derivative of 1/lambda^(1-alpha) times <G, residual>.
    {
        double g_dot_res = 0.0;
        for (std::size_t i = 0; i < residual.size(); ++i)
            g_dot_res += grad_out.data()[i] * residual.data()[i];
        d_value[static_cast<std::size_t>(r - 1)] +=
            (alpha - 1.0) * std::pow(lam_r, alpha - 2.0) * g_dot_res;
    }

    // Leading components lambda_i^alpha u_i v_i^T for i < r-1 ... i < r.
    for (int i = 0; i + 1 < r; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const auto& t = cache.triples[iu];
        const double w = std::pow(t.value, alpha);
        double u_g_v = 0.0;
        for (std::size_t a = 0; a < rows; ++a)
            for (std::size_t b = 0; b < cols; ++b) {
                const double g = grad_out(a, b);
                d_left[iu][a] += w * g * t.right[b];
                d_right[iu][b] += w * g * t.left[a];
                u_g_v += t.left[a] * g * t.right[b];
            }
        d_value[iu] += alpha * std::pow(t.value, alpha - 1.0) * u_g_v;
    }

    // Walk the deflation chain backwards. d_m currently holds the gradient on
    // M_r; each step flushes triple i through its iteration trace, then maps
    // the matrix gradient across the deflation M_i = M_{i-1} - lam u v^T.
    for (int i = r - 1; i >= 0; --i) {
        const auto iu = static_cast<std::size_t>(i);
        power_iterate_backward(cache.deflated[iu], cache.traces[iu], d_value[iu],
                               std::move(d_left[iu]), std::move(d_right[iu]), d_m);
        if (i > 0) {
            const auto& t = cache.triples[iu - 1];
            double u_dm_v = 0.0;
            for (std::size_t a = 0; a < rows; ++a)
                for (std::size_t b = 0; b < cols; ++b) {
                    const double g = d_m(a, b);
                    d_left[iu - 1][a] -= t.value * g * t.right[b];
                    d_right[iu - 1][b] -= t.value * g * t.left[a];
                    u_dm_v += t.left[a] * g * t.right[b];
                }
            d_value[iu - 1] -= u_dm_v;
            // The matrix term of the deflation VJP is the identity: d_m
            // continues to M_{i-1} unchanged.
        }
    }
    return d_m;
}

Matrix mpn(const Matrix& p, double beta, MpnCache* cache) {
    if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("mpn: beta must be in (0, 1]");
    EigFactors f = eigh_spd(p); // also enforces symmetry and the PSD window
    const std::size_t n = p.rows();
    Matrix scaled_vectors = f.vectors;
    for (std::size_t j = 0; j < n; ++j) {
        const double w = std::pow(f.values[j], beta);
        for (std::size_t i = 0; i < n; ++i) scaled_vectors(i, j) *= w;
    }
    Matrix out = matmul(scaled_vectors, transpose(f.vectors));
    if (cache != nullptr) {
        cache->eig = std::move(f);
        cache->beta = beta;
        cache->dim = n;
    }
    return out;
}

Matrix mpn_backward(const MpnCache& cache, const Matrix& grad_out, double eps) {
    const std::size_t n = cache.dim;
    if (grad_out.rows() != n || grad_out.cols() != n)
        throw ContractError("mpn_backward: grad shape does not match the cached forward");
    const Vector& w = cache.eig.values;
    const double beta = cache.beta;

    // Divided differences of x -> x^beta; only the symmetric part of the
    // upstream gradient matters because the forward input is symmetric.
    Matrix g_sym(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) g_sym(i, j) = 0.5 * (grad_out(i, j) + grad_out(j, i));
    Matrix inner = matmul(transpose(cache.eig.vectors), matmul(g_sym, cache.eig.vectors));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double wi = w[i], wj = w[j];
            double slope;
            if (std::fabs(wi - wj) > 1e-12 * std::max({1.0, wi, wj})) {
                slope = (std::pow(wi, beta) - std::pow(wj, beta)) / (wi - wj);
            } else {
                slope = beta * std::pow(std::max(0.5 * (wi + wj), eps), beta - 1.0);
            }
            inner(i, j) *= slope;
        }
    }
    return matmul(cache.eig.vectors, matmul(inner, transpose(cache.eig.vectors)));
}

Matrix epn(const Matrix& q) {
    ensure_finite(q, "epn");
    Matrix out(q.rows(), q.cols());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double x = q.data()[i];
        out.data()[i] = (x >= 0.0 ? 1.0 : -1.0) * std::sqrt(std::fabs(x));
    }
    const double norm = frobenius_norm(out);
    if (norm == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] /= norm;
    return out;
}

Matrix layer_norm_matrix(const Matrix& q, double gain, double bias, double eps) {
    if (q.size() < 2) throw ShapeError("layer_norm_matrix: need at least 2 entries");
    ensure_finite(q, "layer_norm_matrix");
    const double n = static_cast<double>(q.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) mean += q.data()[i];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double d = q.data()[i] - mean;
        var += d * d;
    }
    var /= n;
    const double denom = std::sqrt(var) + eps;
    Matrix out(q.rows(), q.cols());
    for (std::size_t i = 0; i < q.size(); ++i)
        out.data()[i] = gain * (q.data()[i] - mean) / denom + bias;
    return out;
}

AdaptiveScaleParam AdaptiveScaleParam::from_tau(double tau) {
    if (!(tau > 0.0)) throw ConfigError("adaptive_scale: tau must be positive");
    // Inverse softplus: s = log(e^tau - 1).
    double s;
    if (tau > 30.0) s = tau;
    else s = std::log(std::expm1(tau));
    return AdaptiveScaleParam{s};
}

double AdaptiveScaleParam::tau() const {
    const double s = unconstrained;
    return s > 30.0 ? s : std::log1p(std::exp(s));
}

double AdaptiveScaleParam::dtau_dunconstrained() const {
    const double s = unconstrained;
    if (s > 30.0) return 1.0;
    const double e = std::exp(s);
    return e / (1.0 + e);
}

Matrix adaptive_scale(const Matrix& q, const AdaptiveScaleParam& param) {
    ensure_finite(q, "adaptive_scale");
    const double tau = param.tau();
    Matrix out(q.rows(), q.cols());
    for (std::size_t i = 0; i < q.size(); ++i) out.data()[i] = q.data()[i] / tau;
    return out;
}

AdaptiveScaleGrads adaptive_scale_backward(const Matrix& q, const AdaptiveScaleParam& param,
                                           const Matrix& grad_out) {
    if (!q.same_shape(grad_out)) throw ContractError("adaptive_scale_backward: shape mismatch");
    const double tau = param.tau();
    AdaptiveScaleGrads g;
    g.d_q = Matrix(q.rows(), q.cols());
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        g.d_q.data()[i] = grad_out.data()[i] / tau;
        acc += grad_out.data()[i] * q.data()[i];
    }
    g.d_tau = -acc / (tau * tau);
    g.d_unconstrained = g.d_tau * param.dtau_dunconstrained();
    return g;
}

} // namespace sot
