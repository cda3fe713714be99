#include <sggnn/relation.hpp>
#include <sggnn/trainer.hpp>

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace sggnn;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) {
        x = d(rng);
    }
    return v;
}

EmbedHeadParams identity_head(std::size_t n) {
    return {Matrix::identity(n), Matrix(1, n), Matrix::identity(n), Matrix(1, n)};
}

} // namespace

TEST(Embed, IdentityHeadRectifiesInput) {
    const std::vector<double> x{1.5, -2.0, 0.0, 3.25};
    EXPECT_EQ(embed(identity_head(4), std::span<const double>(x)), (std::vector<double>{1.5, 0.0, 0.0, 3.25}));
}

TEST(Embed, ZeroWeightsLeaveOnlyTheBiasPath) {
    EmbedHeadParams head{Matrix(3, 3), Matrix{{1.0, -1.0, 2.0}}, Matrix(3, 2), Matrix{{0.5, -0.5}}};
    const std::vector<double> x{4.0, 5.0, 6.0};
    EXPECT_EQ(embed(head, std::span<const double>(x)), (std::vector<double>{0.5, -0.5}));
    head.w2 = Matrix::identity(3);
    head.w2 = Matrix{{1, 0}, {0, 1}, {0, 0}};
    // relu(b1) = [1, 0, 2] -> first two columns pass through, plus b2.
    EXPECT_EQ(embed(head, std::span<const double>(x)), (std::vector<double>{1.5, -0.5}));
}

TEST(Embed, ShapeMismatch) {
    const std::vector<double> x{1.0, 2.0};
    EXPECT_THROW(embed(identity_head(3), std::span<const double>(x)), ShapeError);
}

TEST(Embed, GradientMatchesFiniteDifferences) {
    const ModelParams m = init_params({5, 6, 4, 0}, 17);
    std::mt19937_64 rng(3);
    const std::vector<double> x = random_vector(5, rng);
    for (std::size_t coord = 0; coord < 4; ++coord) {
        auto value = [&](const ModelParams& p) { return embed(p.embed, std::span<const double>(x))[coord]; };
        ad::Tape t;
        const BoundParams b = bind(t, m, true);
        ad::Var raw = t.variable(Matrix::row_vector(x));
        ad::Var out = embed(b, raw);
        Matrix pick(4, 1);
        pick[coord] = 1.0;
        t.backward(ad::matmul(out, t.constant(pick)));
        const ModelParams analytic = collect_gradients(b);
        const ModelParams numeric = sggnn::testing::finite_difference_gradients(m, value);
        for (const auto& [name, err] : sggnn::testing::relative_errors(analytic, numeric)) {
            EXPECT_LT(err, 1e-4) << name << " coord " << coord;
        }
        // input gradient
        for (std::size_t i = 0; i < x.size(); ++i) {
            std::vector<double> up = x;
            std::vector<double> down = x;
            up[i] += 1e-5;
            down[i] -= 1e-5;
            const double fd = (embed(m.embed, std::span<const double>(up))[coord] -
                               embed(m.embed, std::span<const double>(down))[coord]) /
                              2e-5;
            EXPECT_NEAR(raw.grad()[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(RelationFeature, IdenticalInputsGiveZeroPreNormFeature) {
    BatchNormParams bn = BatchNormParams::identity(3);
    const std::vector<double> a{0.3, -1.0, 2.0};
    EXPECT_EQ(relation_feature(a, a, bn), (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(RelationFeature, IdentityNormalizationIsSquaredDifference) {
    const BatchNormParams bn = BatchNormParams::identity(3);
    const std::vector<double> a{1.0, 2.0, -3.0};
    const std::vector<double> b{0.5, 4.0, 1.0};
    const auto d = relation_feature(a, b, bn);
    const double s = 1.0 / std::sqrt(1.0 + bn.eps);
    EXPECT_DOUBLE_EQ(d[0], 0.25 * s);
    EXPECT_DOUBLE_EQ(d[1], 4.0 * s);
    EXPECT_DOUBLE_EQ(d[2], 16.0 * s);
    EXPECT_NEAR(d[2], 16.0, 1e-3);
}

TEST(RelationFeature, SymmetricInArguments) {
    std::mt19937_64 rng(8);
    BatchNormParams bn = BatchNormParams::identity(6);
    bn.gamma = Matrix::row_vector(random_vector(6, rng));
    bn.running_mean = Matrix::row_vector(random_vector(6, rng));
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_vector(6, rng);
        const auto b = random_vector(6, rng);
        EXPECT_EQ(relation_feature(a, b, bn), relation_feature(b, a, bn));
    }
}

TEST(RelationFeature, TrainModeNormalizesByBatchStatistics) {
    std::mt19937_64 rng(9);
    BatchNormParams bn = BatchNormParams::identity(3);
    bn.gamma = Matrix{{2.0, 0.5, 1.5}};
    bn.beta = Matrix{{-1.0, 0.25, 3.0}};
    // Spread the squared differences widely so eps is negligible next to the batch variance.
    Matrix a(4, 3);
    Matrix b(4, 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = 20.0 * static_cast<double>(i % 5) + random_vector(1, rng)[0];
        b[i] = random_vector(1, rng)[0];
    }
    const Matrix out = relation_feature(a, b, bn, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            mean += out(r, c);
        }
        mean /= 4.0;
        double var = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            var += (out(r, c) - mean) * (out(r, c) - mean);
        }
        var /= 4.0;
        EXPECT_NEAR(mean, bn.beta[c], 1e-6);
        EXPECT_NEAR(var, bn.gamma[c] * bn.gamma[c], 1e-6);
    }
    // Running statistics moved toward the batch statistics.
    EXPECT_GT(bn.running_mean[0], 0.0);
    EXPECT_NE(bn.running_var[0], 1.0);
}

TEST(RelationFeature, TrainModeNeedsTwoRows) {
    BatchNormParams bn = BatchNormParams::identity(2);
    EXPECT_THROW(relation_feature(Matrix{{1.0, 2.0}}, Matrix{{0.0, 0.0}}, bn, Mode::train), ShapeError);
}

TEST(RelationFeature, RunningStatisticsUpdateUsesMomentum) {
    BatchNormParams bn = BatchNormParams::identity(1);
    // squared differences {0, 4}: mean 2, biased var 4, unbiased var 8
    relation_feature(Matrix{{0.0}, {2.0}}, Matrix{{0.0}, {0.0}}, bn, Mode::train);
    EXPECT_DOUBLE_EQ(bn.running_mean[0], 0.1 * 2.0);
    EXPECT_DOUBLE_EQ(bn.running_var[0], 0.9 * 1.0 + 0.1 * 8.0);
}

TEST(Score, KnownValues) {
    ClassifierParams clf{Matrix(2, 1), Matrix(1, 1)};
    const std::vector<double> d{3.0, -1.0};
    EXPECT_DOUBLE_EQ(score(clf, d), 0.5);
    clf.b[0] = std::log(3.0);
    EXPECT_NEAR(score(clf, d), 0.75, 1e-15);
    double prev = score(clf, d);
    for (int i = 0; i < 10; ++i) {
        clf.b[0] += 0.5;
        const double s = score(clf, d);
        EXPECT_GT(s, prev);
        prev = s;
    }
    EXPECT_THROW(score(clf, std::vector<double>{1.0}), ShapeError);
}

TEST(BceLoss, KnownValues) {
    EXPECT_NEAR(bce_loss(std::vector<double>{0.5}, std::vector<double>{1.0}), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce_loss(std::vector<double>{1.0 - 1e-7}, std::vector<double>{1.0}), 0.0, 1e-6);
    EXPECT_NEAR(bce_loss(std::vector<double>{0.9, 0.2}, std::vector<double>{1.0, 0.0}),
                -std::log(0.9) - std::log(0.8), 1e-15);
    EXPECT_NEAR(bce_loss(std::vector<double>{0.9, 0.2}, std::vector<double>{1.0, 0.0}), 0.328504, 1e-6);
    EXPECT_THROW(bce_loss(std::vector<double>{0.5}, std::vector<double>{1.0, 0.0}), ShapeError);
}

TEST(BceLoss, NonNegativeAndClamped) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(5);
        std::vector<double> y(5);
        for (std::size_t i = 0; i < 5; ++i) {
            p[i] = u(rng);
            y[i] = u(rng) < 0.5 ? 0.0 : 1.0;
        }
        EXPECT_GE(bce_loss(p, y), 0.0);
    }
    // Exact 0 and 1 predictions stay finite because of the clamp.
    EXPECT_TRUE(std::isfinite(bce_loss(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0})));
}

TEST(PairwiseScores, GalleryEqualToProbe) {
    const ModelParams m = init_params({4, 0, 3, 0}, 5);
    const EmbeddingItem probe{0, 0, 0, {0.1, 0.2, -0.3, 0.4}};
    const std::vector<EmbeddingItem> gallery{EmbeddingItem{1, 0, 0, probe.raw}};
    const auto s = pairwise_scores(m, probe, gallery);
    ASSERT_EQ(s.size(), 1u);
    const auto bn0 = relation_feature(std::vector<double>(3, 0.0), std::vector<double>(3, 0.0), m.relation_bn);
    EXPECT_DOUBLE_EQ(s[0], score(m.pg_classifier, bn0));
}

TEST(PairwiseScores, EquivariantUnderPermutationAndMatchesComposition) {
    const ModelParams m = init_params({6, 0, 4, 0}, 12);
    SynthConfig cfg;
    cfg.num_identities = 4;
    cfg.images_per_identity = 3;
    cfg.dim = 6;
    const EmbeddingCorpus c = generate_synthetic(cfg);
    const EmbeddingItem& probe = c[0];
    std::vector<EmbeddingItem> gallery(c.items().begin() + 1, c.items().end());
    const auto s = pairwise_scores(m, probe, gallery);
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        const auto a = embed(m.embed, std::span<const double>(probe.raw));
        const auto b = embed(m.embed, std::span<const double>(gallery[i].raw));
        EXPECT_DOUBLE_EQ(s[i], score(m.pg_classifier, relation_feature(a, b, m.relation_bn)));
    }
    std::vector<std::size_t> perm(gallery.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<EmbeddingItem> shuffled;
    for (std::size_t p : perm) {
        shuffled.push_back(gallery[p]);
    }
    const auto s2 = pairwise_scores(m, probe, shuffled);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        EXPECT_EQ(s2[i], s[perm[i]]);
    }
    EXPECT_TRUE(pairwise_scores(m, probe, std::vector<EmbeddingItem>{}).empty());
}

TEST(RelationFeaturePayload, LabelIsIdentityEquality) {
    const ModelParams m = init_params({2, 0, 2, 0}, 1);
    const EmbeddingItem a{0, 4, 0, {1.0, 2.0}};
    const EmbeddingItem b{1, 4, 0, {1.5, 2.0}};
    const EmbeddingItem c{2, 5, 0, {1.5, 2.0}};
    EXPECT_EQ(make_relation_feature(m, a, b).label, 1);
    EXPECT_EQ(make_relation_feature(m, a, c).label, 0);
    EXPECT_EQ(make_relation_feature(m, a, c).gallery_item, 2);
}

TEST(BaseLossGradient, MatchesFiniteDifferences) {
    SynthConfig sc;
    sc.num_identities = 3;
    sc.images_per_identity = 3;
    sc.dim = 5;
    const EmbeddingCorpus c = generate_synthetic(sc);
    const ModelParams m = init_params({5, 0, 4, 0}, 21);
    const MiniBatch batch = sample_batch(c, {2, 3, 4}, {0, 0});
    const FusionConfig fusion;
    const LossAndGrads lg = batch_loss(m, c, batch, Stage::base, fusion, 0.0, true);
    const ModelParams numeric = sggnn::testing::finite_difference_gradients(
        m, [&](const ModelParams& p) { return batch_loss(p, c, batch, Stage::base, fusion, 0.0, false).loss.total; });
    for (const auto& [name, err] : sggnn::testing::relative_errors(lg.grads, numeric)) {
        EXPECT_LT(err, 1e-4) << name;
    }
    EXPECT_GT(frobenius_norm(lg.grads.embed.w1), 0.0);
    EXPECT_EQ(frobenius_norm(lg.grads.message.w1), 0.0);
}
