#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sot/toy_transformer.hpp"
#include "support/test_utils.hpp"

using namespace sot;
using namespace sot::testing;

namespace {

SynthTaskSpec small_cov_task() {
    SynthTaskSpec spec;
    spec.kind = SynthKind::covariance_task;
    spec.class_count = 3;
    spec.token_dim = 8;
    spec.seq_len = 10;
    spec.noise = 0.1;
    spec.seed = 5;
    return spec;
}

// Mean token vector of one class across all samples and tokens.
Vector class_mean(const SynthDataset& data, int label, int token_dim) {
    Vector mean(static_cast<std::size_t>(token_dim), 0.0);
    std::size_t count = 0;
    for (std::size_t s = 0; s < data.samples.size(); ++s) {
        if (data.labels[s] != label) continue;
        const Matrix& m = data.samples[s];
        for (std::size_t j = 0; j < m.cols(); ++j) {
            for (std::size_t i = 0; i < m.rows(); ++i) mean[i] += m(i, j);
            ++count;
        }
    }
    for (double& x : mean) x /= static_cast<double>(count);
    return mean;
}

Matrix class_covariance(const SynthDataset& data, int label, int token_dim, bool second_half,
                        bool split) {
    const auto p = static_cast<std::size_t>(token_dim);
    Matrix cov(p, p);
    std::size_t count = 0;
    std::vector<std::size_t> indices;
    for (std::size_t s = 0; s < data.samples.size(); ++s)
        if (data.labels[s] == label) indices.push_back(s);
    const std::size_t begin = split && second_half ? indices.size() / 2 : 0;
    const std::size_t end = split && !second_half ? indices.size() / 2 : indices.size();
    for (std::size_t si = begin; si < end; ++si) {
        const Matrix& m = data.samples[indices[si]];
        for (std::size_t j = 0; j < m.cols(); ++j) {
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = 0; b < p; ++b) cov(a, b) += m(a, j) * m(b, j);
            ++count;
        }
    }
    return scale(cov, 1.0 / static_cast<double>(count));
}

} // namespace

TEST_CASE("make_synth is seed deterministic") {
    SynthTaskSpec spec = small_cov_task();
    SynthDataset a = make_synth(spec, 20);
    SynthDataset b = make_synth(spec, 20);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i] == b.samples[i]);
        CHECK(a.labels[i] == b.labels[i]);
    }
    spec.seed += 1;
    SynthDataset c = make_synth(spec, 20);
    CHECK(a.samples[0] != c.samples[0]);
}

TEST_CASE("covariance task: class means agree within statistical error") {
    SynthTaskSpec spec = small_cov_task();
    const int count = 300;
    SynthDataset data = make_synth(spec, count);

    // Pooled per-coordinate variance bounds the mean difference at ~3 sigma.
    for (int a = 0; a < spec.class_count; ++a) {
        for (int b = a + 1; b < spec.class_count; ++b) {
            Vector ma = class_mean(data, a, spec.token_dim);
            Vector mb = class_mean(data, b, spec.token_dim);
            Matrix ca = class_covariance(data, a, spec.token_dim, false, false);
            Matrix cb = class_covariance(data, b, spec.token_dim, false, false);
            const double tokens_per_class =
                static_cast<double>(count / spec.class_count) * spec.seq_len;
            double diff_sq = 0.0, var_sum = 0.0;
            for (std::size_t i = 0; i < ma.size(); ++i) {
                const double d = ma[i] - mb[i];
                diff_sq += d * d;
                var_sum += (ca(i, i) + cb(i, i)) / tokens_per_class;
            }
            CHECK(std::sqrt(diff_sq) < 3.0 * std::sqrt(var_sum));
        }
    }
}

TEST_CASE("covariance task: class covariances differ far above estimation error") {
    SynthTaskSpec spec = small_cov_task();
    SynthDataset data = make_synth(spec, 300);

    double max_within = 0.0;
    for (int c = 0; c < spec.class_count; ++c) {
        Matrix first = class_covariance(data, c, spec.token_dim, false, true);
        Matrix second = class_covariance(data, c, spec.token_dim, true, true);
        max_within = std::max(max_within, frobenius_norm(sub(first, second)));
    }
    double min_between = 1e300;
    for (int a = 0; a < spec.class_count; ++a)
        for (int b = a + 1; b < spec.class_count; ++b) {
            Matrix ca = class_covariance(data, a, spec.token_dim, false, false);
            Matrix cb = class_covariance(data, b, spec.token_dim, false, false);
            min_between = std::min(min_between, frobenius_norm(sub(ca, cb)));
        }
    CHECK(min_between > 10.0 * max_within);
}

TEST_CASE("mean task tokens carry the class mean") {
    SynthTaskSpec spec;
    spec.kind = SynthKind::mean_task;
    spec.class_count = 3;
    spec.token_dim = 6;
    spec.seq_len = 8;
    spec.noise = 0.05;
    spec.seed = 9;
    SynthDataset data = make_synth(spec, 120);
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b) {
            Vector ma = class_mean(data, a, 6);
            Vector mb = class_mean(data, b, 6);
            double diff = 0.0;
            for (std::size_t i = 0; i < ma.size(); ++i) diff += (ma[i] - mb[i]) * (ma[i] - mb[i]);
            CHECK(std::sqrt(diff) > 0.5); // distinct means by construction
        }
}

TEST_CASE("train with 0 steps reports initial accuracy and changes nothing") {
    ToyModelConfig cfg;
    cfg.depth = 1;
    cfg.token_dim = 6;
    cfg.msa_heads = 2;
    cfg.mlp_hidden = 8;
    cfg.seq_len = 6;
    cfg.class_count = 3;
    cfg.pool = PoolKind::gap;
    cfg.seed = 31;
    SynthTaskSpec task;
    task.kind = SynthKind::mean_task;
    task.class_count = 3;
    task.token_dim = 6;
    task.seq_len = 6;
    task.seed = 31;
    TrainConfig tc;
    tc.steps = 0;
    tc.train_count = 30;
    tc.test_count = 30;

    ToyModel trained;
    TrainReport report = train(cfg, task, tc, &trained);
    CHECK(report.steps_run == 0);
    CHECK_FALSE(report.diverged);
    CHECK(report.losses.empty());

    ToyModel fresh(cfg, cfg.seed);
    std::vector<std::span<double>> a, b;
    for_each_param(fresh.config(), fresh.params(),
                   [&](const std::string&, std::span<double> s) { a.push_back(s); });
    for_each_param(trained.config(), trained.params(),
                   [&](const std::string&, std::span<double> s) { b.push_back(s); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) CHECK(a[i][j] == b[i][j]);
}

TEST_CASE("training is bitwise deterministic given the seed") {
    ToyModelConfig cfg;
    cfg.depth = 1;
    cfg.token_dim = 6;
    cfg.msa_heads = 2;
    cfg.mlp_hidden = 8;
    cfg.seq_len = 6;
    cfg.class_count = 2;
    cfg.pool = PoolKind::mgcrp;
    cfg.mgcrp_heads = 1;
    cfg.mgcrp_m = 3;
    cfg.mgcrp_n = 3;
    cfg.seed = 33;
    SynthTaskSpec task;
    task.kind = SynthKind::covariance_task;
    task.class_count = 2;
    task.token_dim = 6;
    task.seq_len = 6;
    task.seed = 17;
    TrainConfig tc;
    tc.steps = 12;
    tc.batch = 4;
    tc.train_count = 24;
    tc.test_count = 24;

    TrainReport r1 = train(cfg, task, tc);
    TrainReport r2 = train(cfg, task, tc);
    REQUIRE(r1.losses.size() == r2.losses.size());
    for (std::size_t i = 0; i < r1.losses.size(); ++i) CHECK(r1.losses[i] == r2.losses[i]);
    CHECK(r1.train_accuracy == r2.train_accuracy);
    CHECK(r1.test_accuracy == r2.test_accuracy);
    CHECK(r1.to_key_values() == r2.to_key_values());
}

TEST_CASE("mean task trains to high accuracy quickly") {
    ToyModelConfig cfg;
    cfg.depth = 1;
    cfg.token_dim = 8;
    cfg.msa_heads = 2;
    cfg.mlp_hidden = 16;
    cfg.seq_len = 8;
    cfg.class_count = 3;
    cfg.pool = PoolKind::gap;
    cfg.scheme = FusionScheme::sum;
    cfg.seed = 35;
    SynthTaskSpec task;
    task.kind = SynthKind::mean_task;
    task.class_count = 3;
    task.token_dim = 8;
    task.seq_len = 8;
    task.noise = 0.2;
    task.seed = 35;
    TrainConfig tc;
    tc.steps = 400;
    tc.batch = 16;
    tc.train_count = 120;
    tc.test_count = 120;

    TrainReport report = train(cfg, task, tc);
    CHECK_FALSE(report.diverged);
    CHECK(report.train_accuracy >= 0.99);
}

TEST_CASE("loss decreases over the first 50 steps on full-batch mean task") {
    int monotone_seeds = 0;
    for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
        ToyModelConfig cfg;
        cfg.depth = 1;
        cfg.token_dim = 6;
        cfg.msa_heads = 2;
        cfg.mlp_hidden = 8;
        cfg.seq_len = 6;
        cfg.class_count = 3;
        cfg.pool = PoolKind::gap;
        cfg.seed = seed;
        SynthTaskSpec task;
        task.kind = SynthKind::mean_task;
        task.class_count = 3;
        task.token_dim = 6;
        task.seq_len = 6;
        task.noise = 0.1;
        task.seed = seed + 1;
        TrainConfig tc;
        tc.steps = 50;
        tc.batch = 32; // full batch: the per-step loss is the exact objective
        tc.train_count = 32;
        tc.test_count = 16;

        TrainReport report = train(cfg, task, tc);
        bool monotone = true;
        for (std::size_t i = 1; i < report.losses.size(); ++i)
            monotone = monotone && report.losses[i] < report.losses[i - 1];
        if (monotone) ++monotone_seeds;
    }
    CHECK(monotone_seeds >= 2);
}
