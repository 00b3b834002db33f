#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sot/normalization.hpp"
#include "support/test_utils.hpp"

using namespace sot;
using namespace sot::testing;

TEST_CASE("svpn_exact on identity is the identity") {
    SvpnExactResult r = svpn_exact(Matrix::identity(3), 0.5);
    CHECK(frobenius_rel_diff(r.normalized, Matrix::identity(3)) < 1e-12);
}

TEST_CASE("svpn_exact on diag(4,1) with alpha=0.5") {
    Matrix q{{4.0, 0.0}, {0.0, 1.0}};
    SvpnExactResult r = svpn_exact(q, 0.5);
    Matrix expected{{2.0, 0.0}, {0.0, 1.0}};
    CHECK(frobenius_norm(sub(r.normalized, expected)) < 1e-12);
}

TEST_CASE("svpn_exact on permuted diagonal matches the analytic SVD") {
    Matrix q{{0.0, 2.0}, {3.0, 0.0}};
    SvpnExactResult r = svpn_exact(q, 0.5);
    Matrix expected{{0.0, std::sqrt(2.0)}, {std::sqrt(3.0), 0.0}};
    CHECK(frobenius_norm(sub(r.normalized, expected)) < 1e-12);
}

TEST_CASE("svpn_exact positive homogeneity and spectrum") {
    Rng rng(41);
    Matrix q = random_matrix(4, 5, rng);
    SvpnExactResult base = svpn_exact(q, 0.5);
    for (double c : {0.5, 2.0, 10.0}) {
        SvpnExactResult scaled_result = svpn_exact(scale(q, c), 0.5);
        Matrix expected = scale(base.normalized, std::pow(c, 0.5));
        CHECK(frobenius_rel_diff(scaled_result.normalized, expected) < 1e-10);
    }
    // Singular values of the output equal lambda^alpha.
    Vector out_sv = svd(base.normalized).singular_values;
    for (std::size_t i = 0; i < out_sv.size(); ++i)
        CHECK(std::fabs(out_sv[i] - std::pow(base.factors.singular_values[i], 0.5)) < 1e-8);
}

TEST_CASE("svpn_exact with alpha=1 is the identity map") {
    Rng rng(43);
    Matrix q = random_matrix(5, 4, rng);
    SvpnExactResult r = svpn_exact(q, 1.0);
    CHECK(frobenius_rel_diff(r.normalized, q) < 1e-12);
}

TEST_CASE("power_iterate on diag(3,1) converges to the dominant direction") {
    Matrix q{{3.0, 0.0}, {0.0, 1.0}};
    Vector v0 = {1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)};
    SingularTriple t = power_iterate(q, v0, 50);
    CHECK(t.value == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::fabs(t.right[0]) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::fabs(t.right[1]) < 1e-10);
}

TEST_CASE("power_iterate is exact on rank-1 input after one iteration") {
    Rng rng(47);
    Vector a(5), b(7);
    for (double& x : a) x = rng.gaussian();
    for (double& x : b) x = rng.gaussian();
    const double na = norm2(a), nb = norm2(b);
    for (double& x : a) x /= na;
    for (double& x : b) x /= nb;
    Matrix q = scale(outer(a, b), 2.0);

    SingularTriple t = power_iterate(q, power_iteration_start(7), 1);
    CHECK(t.value == doctest::Approx(2.0).epsilon(1e-12));
    // Recovered pair equals (a, b) up to the joint sign handled by convention.
    CHECK(std::fabs(std::fabs(dot(t.left, a)) - 1.0) < 1e-12);
    CHECK(std::fabs(std::fabs(dot(t.right, b)) - 1.0) < 1e-12);
    CHECK(frobenius_norm(sub(scale(outer(t.left, t.right), t.value), q)) < 1e-10);
}

TEST_CASE("power_iterate matches the svd top value on random input") {
    Rng rng(53);
    Matrix q = random_matrix(5, 7, rng);
    SingularTriple t = power_iterate(q, power_iteration_start(7), 100);
    CHECK(std::fabs(t.value - svd(q).singular_values[0]) < 1e-8);
}

TEST_CASE("power_iterate error cases") {
    Matrix zero(3, 3);
    CHECK_THROWS_AS(power_iterate(zero, power_iteration_start(3), 5), DegenerateDirectionError);

    // v0 orthogonal to the row space of a rank-1 matrix.
    Matrix q{{1.0, 0.0}, {0.0, 0.0}};
    Vector v0 = {0.0, 1.0};
    CHECK_THROWS_AS(power_iterate(q, v0, 3), DegenerateDirectionError);

    Matrix ok{{1.0, 0.0}, {0.0, 2.0}};
    CHECK_THROWS_AS(power_iterate(ok, Vector{2.0, 0.0}, 3), ConfigError);
    CHECK_THROWS_AS(power_iterate(ok, power_iteration_start(2), 0), ConfigError);
}

TEST_CASE("deflate removes the known top component") {
    Matrix q = Matrix::diag({3.0, 2.0, 1.0});
    SingularTriple top{3.0, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}};
    Matrix d = deflate(q, {top});
    CHECK(frobenius_norm(sub(d, Matrix::diag({0.0, 2.0, 1.0}))) < 1e-14);

    Rng rng(59);
    Vector a(4), b(4);
    for (double& x : a) x = rng.gaussian();
    for (double& x : b) x = rng.gaussian();
    const double na = norm2(a), nb = norm2(b);
    for (double& x : a) x /= na;
    for (double& x : b) x /= nb;
    Matrix rank1 = scale(outer(a, b), 1.7);
    SingularTriple own{1.7, a, b};
    CHECK(frobenius_norm(deflate(rank1, {own})) < 1e-12);

    CHECK_THROWS_AS(deflate(q, {}), ContractError);
    SingularTriple bad{1.0, {1.0, 0.0}, {1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(deflate(q, {bad}), ShapeError);
}

TEST_CASE("deflating the exact top triple exposes the second singular value") {
    Rng rng(61);
    Matrix q = random_matrix(5, 7, rng);
    SvdFactors f = svd(q);
    SingularTriple top;
    top.value = f.singular_values[0];
    top.left.assign(5, 0.0);
    top.right.assign(7, 0.0);
    for (std::size_t i = 0; i < 5; ++i) top.left[i] = f.u(i, 0);
    for (std::size_t i = 0; i < 7; ++i) top.right[i] = f.v(i, 0);
    Matrix d = deflate(q, {top});
    CHECK(std::fabs(svd(d).singular_values[0] - f.singular_values[1]) < 1e-8);
}

TEST_CASE("svpn_approx r=1 identities") {
    // diag(4,1): converged iterations give lambda_1 = 4 and Q/2.
    Matrix q{{4.0, 0.0}, {0.0, 1.0}};
    SvpnConfig cfg;
    cfg.alpha = 0.5;
    cfg.num_singular = 1;
    cfg.iterations = 60;
    Matrix out = svpn_approx(q, cfg);
    Matrix expected{{2.0, 0.0}, {0.0, 0.5}};
    CHECK(frobenius_norm(sub(out, expected)) < 1e-12);

    // Bitwise: r=1 output is exactly Q / lambda_1^(1-alpha).
    SvpnApproxCache cache = svpn_approx_forward(q, cfg);
    const double lam = cache.triples[0].value;
    for (std::size_t i = 0; i < q.size(); ++i)
        CHECK(cache.output.data()[i] == q.data()[i] / std::pow(lam, 1.0 - cfg.alpha));
}

TEST_CASE("svpn_approx on a flat spectrum equals svpn_exact immediately") {
    Matrix q{{2.0, 0.0}, {0.0, 2.0}};
    SvpnConfig cfg;
    cfg.alpha = 0.5;
    cfg.num_singular = 1;
    cfg.iterations = 1;
    Matrix out = svpn_approx(q, cfg);
    Matrix expected = Matrix::diag({std::sqrt(2.0), std::sqrt(2.0)});
    CHECK(frobenius_norm(sub(out, expected)) < 1e-12);
    CHECK(frobenius_rel_diff(out, svpn_exact(q, 0.5).normalized) < 1e-12);
}

TEST_CASE("svpn_approx with full rank and converged iterations matches svpn_exact") {
    Rng rng(67);
    Vector spectrum = {2.5, 1.6, 0.9, 0.4};
    Matrix q = matrix_with_spectrum(4, 4, spectrum, rng);
    SvpnConfig cfg;
    cfg.alpha = 0.5;
    cfg.num_singular = 4;
    cfg.iterations = 200;
    Matrix approx = svpn_approx(q, cfg);
    Matrix exact = svpn_exact(q, 0.5).normalized;
    CHECK(frobenius_rel_diff(approx, exact) < 1e-6);
}

TEST_CASE("svpn_approx near-singular and config errors") {
    Matrix rank1{{1.0, 0.0}, {0.0, 0.0}};
    SvpnConfig cfg;
    cfg.num_singular = 2;
    cfg.iterations = 30;
    CHECK_THROWS_AS(svpn_approx(rank1, cfg), NearSingularError);

    SvpnConfig too_many;
    too_many.num_singular = 3;
    CHECK_THROWS_AS(svpn_approx(Matrix::identity(2), too_many), ConfigError);

    SvpnConfig bad_alpha;
    bad_alpha.alpha = 1.5;
    CHECK_THROWS_AS(svpn_approx(Matrix::identity(2), bad_alpha), ConfigError);
}

TEST_CASE("svpn_approx with alpha=1 run to convergence is the identity map") {
    Rng rng(71);
    Matrix q = random_matrix(3, 3, rng);
    SvpnConfig cfg;
    cfg.alpha = 1.0;
    cfg.num_singular = 1;
    cfg.iterations = 200;
    CHECK(frobenius_rel_diff(svpn_approx(q, cfg), q) < 1e-12);
}

TEST_CASE("svpn_approx error decreases monotonically in r at converged iterations") {
    Rng rng(73);
    Vector spectrum = {3.0, 2.1, 1.4, 0.8, 0.3};
    Matrix q = matrix_with_spectrum(5, 5, spectrum, rng);
    Matrix exact = svpn_exact(q, 0.5).normalized;
    double prev = 1e300;
    for (int r = 1; r <= 5; ++r) {
        SvpnConfig cfg;
        cfg.num_singular = r;
        cfg.iterations = 300;
        const double err = frobenius_rel_diff(svpn_approx(q, cfg), exact);
        CHECK(err <= prev + 1e-12);
        prev = err;
    }
    CHECK(prev < 1e-8); // full r reproduces the exact normalization
}

TEST_CASE("deflated power iteration recovers the full spectrum (Proposition 1 oracle)") {
    Rng rng(79);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t m = 3 + static_cast<std::size_t>(trial % 5);
        const std::size_t n = 3 + static_cast<std::size_t>((trial * 2) % 6);
        const std::size_t k = std::min(m, n);
        Vector spectrum(k);
        double v = 2.0 + rng.uniform();
        for (std::size_t i = 0; i < k; ++i) {
            spectrum[i] = v;
            v *= 0.45 + 0.15 * rng.uniform();
        }
        Matrix q = matrix_with_spectrum(m, n, spectrum, rng);
        Vector reference = svd(q).singular_values;

        Matrix work = q;
        std::vector<SingularTriple> triples;
        for (std::size_t i = 0; i < k; ++i) {
            SingularTriple t = power_iterate(work, power_iteration_start(n), 200);
            CHECK(std::fabs(t.value - reference[i]) < 1e-8);
            triples.push_back(t);
            work = deflate(q, triples);
        }
    }
}

TEST_CASE("mpn identity, diagonal, and square-root property") {
    CHECK(frobenius_rel_diff(mpn(Matrix::identity(4), 0.5), Matrix::identity(4)) < 1e-12);

    Matrix d{{9.0, 0.0}, {0.0, 4.0}};
    Matrix r = mpn(d, 0.5);
    CHECK(frobenius_norm(sub(r, Matrix::diag({3.0, 2.0}))) < 1e-12);

    Rng rng(83);
    Matrix p = random_spd(5, rng);
    Matrix half = mpn(p, 0.5);
    CHECK(frobenius_rel_diff(matmul(half, half), p) < 1e-8);

    Matrix asym{{1.0, 0.5}, {0.1, 1.0}};
    CHECK_THROWS_AS(mpn(asym, 0.5), DomainError);
}

TEST_CASE("epn examples and unit norm") {
    Matrix q{{4.0, -9.0}};
    Matrix e = epn(q);
    const double n = std::sqrt(13.0);
    CHECK(e(0, 0) == doctest::Approx(2.0 / n));
    CHECK(e(0, 1) == doctest::Approx(-3.0 / n));

    CHECK(frobenius_norm(epn(Matrix(3, 3))) == 0.0);

    Rng rng(89);
    for (int trial = 0; trial < 4; ++trial) {
        Matrix m = random_matrix(3, 5, rng);
        CHECK(frobenius_norm(epn(m)) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm_matrix statistics") {
    Matrix constant(3, 4, 2.5);
    Matrix out = layer_norm_matrix(constant, 1.0, 0.0);
    CHECK(frobenius_norm(out) < 1e-9);

    Rng rng(97);
    Matrix q = random_matrix(4, 6, rng);
    Matrix normed = layer_norm_matrix(q, 1.0, 0.0);
    double mean = 0.0;
    for (std::size_t i = 0; i < normed.size(); ++i) mean += normed.data()[i];
    mean /= static_cast<double>(normed.size());
    double var = 0.0;
    for (std::size_t i = 0; i < normed.size(); ++i) {
        const double d = normed.data()[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(normed.size());
    CHECK(std::fabs(mean) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-10);

    Matrix biased = layer_norm_matrix(q, 0.0, 0.7);
    for (std::size_t i = 0; i < biased.size(); ++i) CHECK(biased.data()[i] == 0.7);
}

TEST_CASE("adaptive_scale forward and parameterization") {
    AdaptiveScaleParam unit = AdaptiveScaleParam::from_tau(1.0);
    CHECK(unit.tau() == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(101);
    Matrix q = random_matrix(3, 3, rng);
    CHECK(frobenius_rel_diff(adaptive_scale(q, unit), q) < 1e-12);

    AdaptiveScaleParam two = AdaptiveScaleParam::from_tau(2.0);
    Matrix d{{4.0, 0.0}, {0.0, 1.0}};
    Matrix expected{{2.0, 0.0}, {0.0, 0.5}};
    CHECK(frobenius_rel_diff(adaptive_scale(d, two), expected) < 1e-12);
}
