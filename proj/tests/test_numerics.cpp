#include "bpmot/errors.hpp"
#include "bpmot/numerics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace bpmot;

namespace {

Mat random_spd(int n, Rng& rng) {
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    return a * a.transpose() + 0.5 * Mat::Identity(n, n);
}

GaussianState random_gaussian(int n, Rng& rng) {
    GaussianState g;
    g.mean = Vec(n);
    for (int i = 0; i < n; ++i) g.mean[i] = rng.normal() * 3.0;
    g.cov = random_spd(n, rng);
    return g;
}

// Weighted moments computed by hand, independent of weighted_moments().
void moments_by_hand(const SigmaPointSet& s, Vec& mean, Mat& cov) {
    const auto n = s.points.rows();
    mean = Vec::Zero(n);
    for (Eigen::Index p = 0; p < s.points.cols(); ++p) mean += s.weights_mean[p] * s.points.col(p);
    cov = Mat::Zero(n, n);
    for (Eigen::Index p = 0; p < s.points.cols(); ++p) {
        const Vec d = s.points.col(p) - mean;
        cov += s.weights_cov[p] * d * d.transpose();
    }
}

}  // namespace

TEST(Cholesky, IdentityAndDiagonal) {
    EXPECT_TRUE(cholesky(Mat::Identity(3, 3)).isApprox(Mat::Identity(3, 3), 0.0));
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 4.0;
    d(1, 1) = 9.0;
    const Mat l = cholesky(d);
    EXPECT_DOUBLE_EQ(l(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(l(1, 1), 3.0);
    EXPECT_DOUBLE_EQ(l(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(l(1, 0), 0.0);
}

TEST(Cholesky, RandomSpdReconstructs) {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const Mat c = random_spd(5, rng);
        const Mat l = cholesky(c);
        EXPECT_LT((l * l.transpose() - c).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_TRUE(l.isLowerTriangular());
    }
}

TEST(Cholesky, SingularPsdSucceedsAfterJitter) {
    Vec v(3);
    v << 1.0, 2.0, -1.0;
    const Mat c = v * v.transpose();
    const Mat l = cholesky(c);
    EXPECT_LT((l * l.transpose() - c).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Cholesky, ZeroMatrixFactorsToZero) {
    EXPECT_TRUE(cholesky(Mat::Zero(4, 4)).isZero(0.0));
}

TEST(Cholesky, IndefiniteThrows) {
    Mat c = Mat::Identity(2, 2);
    c(1, 1) = -1.0;
    try {
        (void)cholesky(c);
        FAIL() << "expected NotPositiveDefinite";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
    }
}

TEST(Cholesky, Deterministic) {
    Rng rng(3);
    const Mat c = random_spd(6, rng);
    EXPECT_TRUE(cholesky(c) == cholesky(c));
}

TEST(GaussianLogpdf, ScalarExamples) {
    GaussianState g{Vec::Zero(2), Mat::Identity(2, 2)};
    EXPECT_NEAR(gaussian_logpdf(Vec::Zero(2), g), -std::log(2.0 * std::numbers::pi), 1e-14);
    GaussianState g1{Vec::Zero(1), Mat::Identity(1, 1)};
    EXPECT_NEAR(gaussian_logpdf(Vec::Ones(1), g1), -0.5 - 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(GaussianLogpdf, QuadratureNormalizes) {
    GaussianState g;
    g.mean = Vec(2);
    g.mean << 0.3, -1.2;
    g.cov = Mat(2, 2);
    g.cov << 1.5, 0.4, 0.4, 0.8;
    const double s0 = std::sqrt(g.cov(0, 0)), s1 = std::sqrt(g.cov(1, 1));
    const int n = 400;
    const double h0 = 16.0 * s0 / n, h1 = 16.0 * s1 / n;
    double sum = 0.0;
    Vec x(2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            x << g.mean[0] - 8.0 * s0 + (i + 0.5) * h0, g.mean[1] - 8.0 * s1 + (j + 0.5) * h1;
            sum += std::exp(gaussian_logpdf(x, g)) * h0 * h1;
        }
    }
    EXPECT_NEAR(sum, 1.0, 1e-4);
}

TEST(GaussianLogpdf, MaximizedAtMean) {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const GaussianState g = random_gaussian(3, rng);
        Vec x = g.mean;
        for (int i = 0; i < 3; ++i) x[i] += rng.normal() * 0.5;
        EXPECT_LE(gaussian_logpdf(x, g), gaussian_logpdf(g.mean, g));
    }
}

TEST(Resample, DegenerateMass) {
    Rng rng(1);
    Vec w(3);
    w << 1.0, 0.0, 0.0;
    const auto idx = systematic_resample(w, 5, rng);
    ASSERT_EQ(idx.size(), 5u);
    for (int i : idx) EXPECT_EQ(i, 0);
}

TEST(Resample, UniformStratification) {
    Rng rng(2);
    const auto idx = systematic_resample(Vec::Constant(4, 0.25), 4, rng);
    std::vector<int> counts(4, 0);
    for (int i : idx) ++counts[static_cast<std::size_t>(i)];
    for (int c : counts) EXPECT_EQ(c, 1);
}

TEST(Resample, CountsWithinOne) {
    Vec w(3);
    w << 0.5, 0.3, 0.2;
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(s);
        const auto idx = systematic_resample(w, 1000, rng);
        std::vector<int> counts(3, 0);
        for (int i : idx) ++counts[static_cast<std::size_t>(i)];
        EXPECT_LE(std::abs(counts[0] - 500), 1);
        EXPECT_LE(std::abs(counts[1] - 300), 1);
        EXPECT_LE(std::abs(counts[2] - 200), 1);
    }
}

TEST(Resample, UnnormalizedWeightsAccepted) {
    Rng rng(4);
    Vec w(2);
    w << 3.0, 1.0;
    const auto idx = systematic_resample(w, 8, rng);
    EXPECT_EQ(std::count(idx.begin(), idx.end(), 0), 6);
}

TEST(Resample, AllZeroThrows) {
    Rng rng(1);
    try {
        (void)systematic_resample(Vec::Zero(3), 3, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyWeights);
    }
}

TEST(Resample, UnbiasedOverSeeds) {
    Vec w(4);
    w << 0.05, 0.15, 0.3, 0.5;
    const int n = 7;
    const int draws = 10000;
    Vec mean_count = Vec::Zero(4);
    for (int s = 0; s < draws; ++s) {
        Rng rng(static_cast<std::uint64_t>(s) + 1000);
        for (int i : systematic_resample(w, n, rng)) mean_count[i] += 1.0;
    }
    mean_count /= draws;
    for (int i = 0; i < 4; ++i) EXPECT_LT(std::abs(mean_count[i] - n * w[i]), 3.0 * std::sqrt(n * w[i]));
}

TEST(SigmaPoints, ScalarLambdaZero) {
    // alpha^2 (n + kappa) - n = 0 with n = 1 needs alpha = 1, kappa = 0.
    GaussianState g{Vec::Zero(1), Mat::Identity(1, 1)};
    const SigmaPointSet s = generate_sigma_points(g, UTParams{1.0, 2.0, 0.0});
    ASSERT_EQ(s.points.cols(), 3);
    EXPECT_NEAR(s.points(0, 0), 0.0, 1e-15);
    EXPECT_NEAR(s.points(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(s.points(0, 2), -1.0, 1e-15);
    EXPECT_NEAR(s.weights_mean[0], 0.0, 1e-15);
    EXPECT_NEAR(s.weights_mean[1], 0.5, 1e-15);
    EXPECT_NEAR(s.weights_mean[2], 0.5, 1e-15);
}

TEST(SigmaPoints, StackedCount) {
    Rng rng(8);
    const GaussianState g = random_gaussian(44, rng);
    const SigmaPointSet s = generate_sigma_points(g, UTParams{});
    EXPECT_EQ(s.points.cols(), 89);
    EXPECT_NEAR(s.weights_mean.sum(), 1.0, 1e-9);
}

TEST(SigmaPoints, MomentReconstruction) {
    Rng rng(9);
    for (int n : {1, 3, 4, 8, 44}) {
        for (int t = 0; t < 5; ++t) {
            const GaussianState g = random_gaussian(n, rng);
            for (const UTParams ut : {UTParams{}, UTParams{1.0, 2.0, 0.0}, UTParams{0.3, 2.0, 1.0}}) {
                const SigmaPointSet s = generate_sigma_points(g, ut);
                EXPECT_EQ(s.points.cols(), 2 * n + 1);
                EXPECT_NEAR(s.weights_mean.sum(), 1.0, 1e-9);
                Vec mean;
                Mat cov;
                moments_by_hand(s, mean, cov);
                EXPECT_LT((mean - g.mean).norm(), 1e-9 * (1.0 + g.mean.norm()));
                EXPECT_LT((cov - g.cov).norm() / g.cov.norm(), 1e-8);
            }
        }
    }
}

TEST(SigmaPoints, FactorWithLargerScalingDimKeepsMoments) {
    Rng rng(10);
    const GaussianState g = random_gaussian(4, rng);
    const Mat l = cholesky(g.cov);
    const SigmaPointSet s = sigma_points_from_factor(g.mean, l, UTParams{}, 12);
    EXPECT_EQ(s.points.cols(), 9);
    Vec mean;
    Mat cov;
    moments_by_hand(s, mean, cov);
    EXPECT_LT((mean - g.mean).norm(), 1e-9);
    EXPECT_LT((cov - g.cov).norm() / g.cov.norm(), 1e-8);
}

TEST(WeightedMoments, MatchesHandComputation) {
    Mat pts(2, 3);
    pts << 0.0, 2.0, 4.0, 1.0, 1.0, 4.0;
    Vec w(3);
    w << 0.25, 0.5, 0.25;
    const GaussianState g = weighted_moments(pts, w);
    EXPECT_NEAR(g.mean[0], 2.0, 1e-15);
    EXPECT_NEAR(g.mean[1], 1.75, 1e-15);
    EXPECT_NEAR(g.cov(0, 0), 2.0, 1e-14);
    EXPECT_NEAR(g.cov(1, 1), 0.25 * 0.5625 + 0.5 * 0.5625 + 0.25 * 5.0625, 1e-14);
    EXPECT_NEAR(g.cov(0, 1), 0.25 * 1.5 + 0.25 * 4.5, 1e-14);
    EXPECT_DOUBLE_EQ(g.cov(0, 1), g.cov(1, 0));
}

TEST(SampleGaussian, MomentsConverge) {
    Rng rng(12);
    const GaussianState g = random_gaussian(3, rng);
    const int n = 20000;
    const Mat x = sample_gaussian(g, n, rng);
    const GaussianState m = weighted_moments(x, Vec::Constant(n, 1.0 / n));
    for (int i = 0; i < 3; ++i) EXPECT_LT(std::abs(m.mean[i] - g.mean[i]), 5.0 * std::sqrt(g.cov(i, i) / n));
    EXPECT_LT((m.cov - g.cov).norm() / g.cov.norm(), 0.05);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.poisson(3.0), b.poisson(3.0));
    EXPECT_EQ(a.beta(2.0, 8.0), b.beta(2.0, 8.0));
}

TEST(Rng, SplitStreamsDiffer) {
    Rng root(42);
    Rng a = root.split(1), b = root.split(2);
    int equal = 0;
    for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
    EXPECT_EQ(equal, 0);
    // split ignores the parent's position in its stream
    Rng c(42);
    (void)c.next_u64();
    Rng d = c.split(1);
    Rng e = Rng(42).split(1);
    EXPECT_EQ(d.next_u64(), e.next_u64());
}

TEST(Rng, DistributionMoments) {
    Rng rng(77);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0, sp = 0, sb = 0, sg = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
        sp += rng.poisson(5.0);
        sb += rng.beta(8.0, 2.0);
        sg += rng.gamma(0.7);
    }
    EXPECT_NEAR(su / n, 0.5, 0.005);
    EXPECT_NEAR(sn / n, 0.0, 0.01);
    EXPECT_NEAR(sn2 / n, 1.0, 0.01);
    EXPECT_NEAR(sp / n, 5.0, 3.0 * std::sqrt(5.0 / n) + 1e-3);
    EXPECT_NEAR(sb / n, 0.8, 0.002);
    EXPECT_NEAR(sg / n, 0.7, 0.01);
}

TEST(Symmetrize, Averages) {
    Mat m(2, 2);
    m << 1.0, 2.0, 4.0, 3.0;
    symmetrize(m);
    EXPECT_DOUBLE_EQ(m(0, 1), 3.0);
    EXPECT_DOUBLE_EQ(m(1, 0), 3.0);
}

TEST(Purity, IdenticalInputsIdenticalOutputs) {
    Rng g1(21), g2(21);
    const GaussianState g = random_gaussian(4, g1);
    (void)random_gaussian(4, g2);
    const Mat a = sample_gaussian(g, 50, g1);
    const Mat b = sample_gaussian(g, 50, g2);
    EXPECT_TRUE(a == b);
    const SigmaPointSet s1 = generate_sigma_points(g, UTParams{});
    const SigmaPointSet s2 = generate_sigma_points(g, UTParams{});
    EXPECT_TRUE(s1.points == s2.points);
}
