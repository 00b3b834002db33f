#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sot/head.hpp"
#include "support/test_utils.hpp"

using namespace sot;
using namespace sot::testing;

namespace {

TokenBatch random_tokens(std::size_t p, std::size_t q, Rng& rng) {
    TokenBatch tb;
    tb.class_token.assign(p, 0.0);
    for (double& x : tb.class_token) x = rng.gaussian();
    tb.words = random_matrix(p, q, rng);
    return tb;
}

HeadParams zero_head(FusionScheme scheme, std::size_t p, std::size_t pool_dim, std::size_t c) {
    Rng rng(0);
    HeadParams head = make_head_params(scheme, p, pool_dim, c, 0.0, rng);
    auto zero = [](std::optional<Affine>& a) {
        if (a.has_value()) {
            a->w = Matrix(a->w.rows(), a->w.cols());
            a->b.assign(a->b.size(), 0.0);
        }
    };
    zero(head.fc_class);
    zero(head.fc_words);
    zero(head.fc_joint);
    return head;
}

} // namespace

TEST_CASE("sum scheme with all-zero maps gives the uniform distribution") {
    Rng rng(301);
    TokenBatch tb = random_tokens(4, 6, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;
    HeadParams head = zero_head(FusionScheme::sum, 4, 4, 4);
    HeadOutput out = head_forward(tb, pool, head);
    REQUIRE(out.kind == ScoreKind::probability_vector);
    double sum = 0.0;
    for (double s : out.scores) {
        CHECK(s == doctest::Approx(0.25));
        sum += s;
    }
    CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("late scheme with all-zero maps gives two uniform softmaxes, sum 2") {
    Rng rng(303);
    TokenBatch tb = random_tokens(4, 6, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;
    HeadParams head = zero_head(FusionScheme::late, 4, 4, 4);
    HeadOutput out = head_forward(tb, pool, head);
    REQUIRE(out.kind == ScoreKind::probability_sum);
    double sum = 0.0;
    for (double s : out.scores) {
        CHECK(s == doctest::Approx(0.5));
        sum += s;
    }
    CHECK(sum == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("probability outputs satisfy the kind invariants") {
    Rng rng(305);
    TokenBatch tb = random_tokens(5, 7, rng);
    SvpnConfig cfg;
    MgcrpParams params = make_mgcrp_params(2, 3, 3, 5, cfg, rng.split("mk"));
    PoolSpec pool;
    pool.kind = PoolKind::mgcrp;
    pool.mgcrp = &params;

    for (FusionScheme scheme : {FusionScheme::sum, FusionScheme::concat, FusionScheme::aggr_all,
                                FusionScheme::late}) {
        HeadParams head = make_head_params(scheme, 5, params.representation_size(), 3, 0.0,
                                           rng.split(fusion_scheme_name(scheme)));
        HeadOutput out = head_forward(tb, pool, head);
        double total = 0.0;
        for (double s : out.scores) {
            CHECK(s >= 0.0);
            total += s;
        }
        const double expected = out.kind == ScoreKind::probability_sum ? 2.0 : 1.0;
        CHECK(total == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("concat head at paper scale has fc_joint input width 1432") {
    Rng rng(307);
    const std::size_t p = 256;
    SvpnConfig cfg;
    MgcrpParams params = make_mgcrp_params(6, 14, 14, p, cfg, rng.split("mk"));
    REQUIRE(params.representation_size() == 1176);
    HeadParams head =
        make_head_params(FusionScheme::concat, p, params.representation_size(), 10, 0.0, rng);
    CHECK(head.fc_joint->in_dim() == 1432);

    TokenBatch tb = random_tokens(p, 8, rng);
    PoolSpec pool;
    pool.kind = PoolKind::mgcrp;
    pool.mgcrp = &params;
    HeadOutput out = head_forward(tb, pool, head);
    CHECK(out.scores.size() == 10);
}

TEST_CASE("head validation rejects scheme/parameter mismatches") {
    Rng rng(311);
    HeadParams head = make_head_params(FusionScheme::sum, 4, 4, 3, 0.0, rng);
    head.scheme = FusionScheme::concat; // wrong maps for concat
    TokenBatch tb = random_tokens(4, 5, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;
    CHECK_THROWS_AS(head_forward(tb, pool, head), ConfigError);

    HeadParams bad = make_head_params(FusionScheme::late, 4, 4, 3, 0.0, rng);
    bad.fc_joint = make_affine(3, 8, rng); // spurious map
    CHECK_THROWS_AS(head_forward(tb, pool, bad), ConfigError);
}

TEST_CASE("sum scheme with fc_words = 0 reduces to the ClassT-only baseline") {
    Rng rng(313);
    TokenBatch tb = random_tokens(4, 6, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;

    HeadParams head = make_head_params(FusionScheme::sum, 4, 4, 3, 0.0, rng.split("h"));
    head.fc_words->w = Matrix(3, 4);
    head.fc_words->b.assign(3, 0.0);
    HeadOutput with_zero = head_forward(tb, pool, head);

    HeadParams baseline = head;
    baseline.fc_words.reset(); // ClassT-only reduction
    HeadOutput reduced = head_forward(tb, pool, baseline);

    Vector direct = softmax(affine_forward(*head.fc_class, tb.class_token));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(with_zero.scores[i] == doctest::Approx(direct[i]).epsilon(1e-12));
        CHECK(reduced.scores[i] == doctest::Approx(direct[i]).epsilon(1e-12));
    }
}

TEST_CASE("aggr_all is invariant to word-token permutations") {
    Rng rng(317);
    TokenBatch tb = random_tokens(4, 6, rng);
    TokenBatch permuted = tb;
    const std::size_t perm[] = {5, 2, 0, 4, 1, 3};
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t i = 0; i < 4; ++i) permuted.words(i, j) = tb.words(i, perm[j]);

    SvpnConfig cfg;
    cfg.mode = SvpnMode::exact;
    MgcrpParams params = make_mgcrp_params(2, 3, 3, 4, cfg, rng.split("mk"));
    PoolSpec pool;
    pool.kind = PoolKind::mgcrp;
    pool.mgcrp = &params;
    HeadParams head = make_head_params(FusionScheme::aggr_all, 4, params.representation_size(),
                                       3, 0.0, rng.split("h"));
    HeadOutput a = head_forward(tb, pool, head);
    HeadOutput b = head_forward(permuted, pool, head);
    for (std::size_t i = 0; i < a.scores.size(); ++i)
        CHECK(std::fabs(a.scores[i] - b.scores[i]) < 1e-10);
}

TEST_CASE("late scheme argmax is preserved under positive rescaling") {
    Rng rng(319);
    TokenBatch tb = random_tokens(4, 6, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;
    HeadParams head = make_head_params(FusionScheme::late, 4, 4, 5, 0.0, rng.split("h"));
    HeadOutput out = head_forward(tb, pool, head);

    std::size_t arg = 0;
    for (std::size_t i = 1; i < out.scores.size(); ++i)
        if (out.scores[i] > out.scores[arg]) arg = i;
    for (double c : {0.1, 3.0, 42.0}) {
        Vector scaled_scores = scaled(out.scores, c);
        std::size_t arg2 = 0;
        for (std::size_t i = 1; i < scaled_scores.size(); ++i)
            if (scaled_scores[i] > scaled_scores[arg2]) arg2 = i;
        CHECK(arg2 == arg);
    }
}

TEST_CASE("cross_entropy examples") {
    HeadOutput uniform{Vector(4, 0.25), ScoreKind::probability_vector};
    CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(4.0)));

    HeadOutput onehot{{1.0, 0.0, 0.0}, ScoreKind::probability_vector};
    CHECK(cross_entropy(onehot, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cross_entropy(onehot, 1) == doctest::Approx(-std::log(1e-15)));

    // Smoothing at uniform prediction has no effect (uniform target mix).
    HeadOutput uniform10{Vector(10, 0.1), ScoreKind::probability_vector};
    CHECK(cross_entropy(uniform10, 3, 0.1) ==
          doctest::Approx(cross_entropy(uniform10, 3, 0.0)).epsilon(1e-12));

    // probability_sum outputs are renormalized by their total before the log.
    HeadOutput late{{0.8, 0.6, 0.4, 0.2}, ScoreKind::probability_sum};
    CHECK(cross_entropy(late, 0) == doctest::Approx(-std::log(0.4)));

    CHECK_THROWS_AS(cross_entropy(uniform, 7), ConfigError);
}

TEST_CASE("softmax cross-entropy logit gradient equals probs minus onehot") {
    Rng rng(323);
    Vector logits(5);
    for (double& x : logits) x = rng.gaussian();
    Vector probs = softmax(logits);
    const std::size_t label = 2;

    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        Vector up = logits, down = logits;
        up[i] += h;
        down[i] -= h;
        const double lu = -std::log(softmax(up)[label]);
        const double ld = -std::log(softmax(down)[label]);
        const double numeric = (lu - ld) / (2.0 * h);
        const double analytic = probs[i] - (i == label ? 1.0 : 0.0);
        CHECK(grad_rel_err(analytic, numeric) < 1e-6);
    }
}

TEST_CASE("head_backward with zero upstream gradient gives zero everywhere") {
    Rng rng(327);
    TokenBatch tb = random_tokens(4, 6, rng);
    SvpnConfig cfg;
    MgcrpParams params = make_mgcrp_params(2, 2, 2, 4, cfg, rng.split("mk"));
    PoolSpec pool;
    pool.kind = PoolKind::mgcrp;
    pool.mgcrp = &params;
    HeadParams head = make_head_params(FusionScheme::sum, 4, params.representation_size(), 3,
                                       0.0, rng.split("h"));
    HeadCache cache;
    (void)head_forward(tb, pool, head, false, 0, &cache);
    HeadGrads grads = head_backward(cache, pool, head, Vector(3, 0.0));
    CHECK(norm2(grads.d_class_token) == 0.0);
    CHECK(frobenius_norm(grads.d_words) == 0.0);
    CHECK(frobenius_norm(grads.d_fc_class->d_w) == 0.0);
    for (const auto& m : grads.d_pool_w) CHECK(frobenius_norm(m) == 0.0);
}

TEST_CASE("full head gradients match finite differences on every scheme") {
    Rng rng(331);
    const std::size_t p = 4, q = 6, c = 3;
    SvpnConfig cfg; // approx (1,1)
    for (FusionScheme scheme : {FusionScheme::sum, FusionScheme::concat, FusionScheme::aggr_all,
                                FusionScheme::late}) {
        TokenBatch tb = random_tokens(p, q, rng);
        MgcrpParams params = make_mgcrp_params(2, 2, 2, p, cfg, rng.split("mk"));
        PoolSpec pool;
        pool.kind = PoolKind::mgcrp;
        pool.mgcrp = &params;
        HeadParams head = make_head_params(scheme, p, params.representation_size(), c, 0.0,
                                           rng.split(fusion_scheme_name(scheme)));
        const std::size_t label = 1;

        HeadCache cache;
        (void)head_forward(tb, pool, head, false, 0, &cache);
        HeadGrads grads = head_loss_backward(cache, pool, head, label);

        auto loss = [&] {
            return cross_entropy(head_forward(tb, pool, head), label);
        };

        CAPTURE(fusion_scheme_name(scheme));
        CHECK(fd_check(tb.words, grads.d_words, loss, 1e-5) < 1e-4);
        const double err_class = fd_check_span(
            tb.class_token.data(), tb.class_token.size(), grads.d_class_token.data(), loss, 1e-5);
        CHECK(err_class < 1e-4);

        if (head.fc_class.has_value()) {
            CHECK(fd_check(head.fc_class->w, grads.d_fc_class->d_w, loss, 1e-5) < 1e-4);
            CHECK(fd_check_span(head.fc_class->b.data(), head.fc_class->b.size(),
                                grads.d_fc_class->d_b.data(), loss, 1e-5) < 1e-4);
        }
        if (head.fc_words.has_value()) {
            CHECK(fd_check(head.fc_words->w, grads.d_fc_words->d_w, loss, 1e-5) < 1e-4);
        }
        if (head.fc_joint.has_value()) {
            CHECK(fd_check(head.fc_joint->w, grads.d_fc_joint->d_w, loss, 1e-5) < 1e-4);
        }
        for (std::size_t hIdx = 0; hIdx < params.heads.size(); ++hIdx) {
            CHECK(fd_check(params.heads[hIdx].w, grads.d_pool_w[hIdx], loss, 1e-5) < 1e-4);
            CHECK(fd_check(params.heads[hIdx].r, grads.d_pool_r[hIdx], loss, 1e-5) < 1e-4);
        }
    }
}

TEST_CASE("dropout: rate 0 is the identity; training masks keep the expectation") {
    Rng rng(337);
    TokenBatch tb = random_tokens(4, 6, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;
    HeadParams head = make_head_params(FusionScheme::sum, 4, 4, 3, 0.0, rng.split("h"));

    HeadCache plain, trained;
    (void)head_forward(tb, pool, head, false, 1, &plain);
    (void)head_forward(tb, pool, head, true, 1, &trained);
    CHECK(plain.dropout_mask.empty());
    CHECK(trained.dropout_mask.empty()); // rate 0 stays inactive in training

    const double rate = 0.3;
    HeadParams dropout_head = head;
    dropout_head.dropout_rate = rate;
    Vector mean(4, 0.0);
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        HeadCache cache;
        (void)head_forward(tb, pool, dropout_head, true, static_cast<std::uint64_t>(i), &cache);
        for (std::size_t j = 0; j < 4; ++j) mean[j] += cache.pooled[j];
    }
    Vector raw = gap(tb.words);
    for (std::size_t j = 0; j < 4; ++j) {
        mean[j] /= trials;
        // Inverted dropout keeps the expected pooled vector within 2 percent.
        CHECK(std::fabs(mean[j] - raw[j]) <= 0.02 * std::max(1.0, std::fabs(raw[j])));
    }
}

TEST_CASE("dropout masks are seed deterministic") {
    Rng rng(341);
    TokenBatch tb = random_tokens(4, 6, rng);
    PoolSpec pool;
    pool.kind = PoolKind::gap;
    HeadParams head = make_head_params(FusionScheme::sum, 4, 4, 3, 0.5, rng.split("h"));
    HeadCache a, b;
    (void)head_forward(tb, pool, head, true, 99, &a);
    (void)head_forward(tb, pool, head, true, 99, &b);
    CHECK(a.dropout_mask == b.dropout_mask);
    HeadCache c;
    (void)head_forward(tb, pool, head, true, 100, &c);
    CHECK(a.dropout_mask != c.dropout_mask);
}
