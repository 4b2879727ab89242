#include "bpmot/motion.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace bpmot;
using namespace bpmot::motion;
using bpmot::testing::error_code_of;
using bpmot::testing::gradient_check;
using bpmot::testing::input_gradient_check;
using bpmot::testing::random_matrix;

namespace {

Vec random_state(Rng& rng) {
    Vec x(4);
    x << rng.normal() * 10.0, rng.normal() * 10.0, rng.normal() * 3.0, rng.normal() * 3.0;
    return x;
}

Mat random_spd(int n, Rng& rng, double scale) {
    const Mat a = random_matrix(n, n, rng);
    return scale * (a * a.transpose() + 0.2 * Mat::Identity(n, n));
}

GaussianState random_gaussian(Rng& rng, double scale = 1.0) { return {random_state(rng), random_spd(4, rng, scale)}; }

NeighborSet random_neighbors(int m, Rng& rng) {
    NeighborSet nb;
    for (int i = 0; i < m; ++i) nb.states.push_back(random_gaussian(rng, 0.5));
    return nb;
}

MotionPrior random_prior(const MotionParams& p, Rng& rng) {
    MotionPrior po;
    po.gaussian = random_gaussian(rng);
    po.existence = rng.uniform(0.2, 1.0);
    po.hidden = random_matrix(p.hidden_dim, 1, rng, 0.3);
    po.origin = po.gaussian.mean.head(2) - 0.5 * po.gaussian.mean.tail(2);
    return po;
}

// Kalman prediction of the stacked neighbor-free CV model.
GaussianState kalman_predict(const GaussianState& g, double dt, const Mat& q) {
    Mat f = Mat::Identity(4, 4);
    f(0, 2) = dt;
    f(1, 3) = dt;
    return {f * g.mean, f * g.cov * f.transpose() + q};
}

double rel(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace

TEST(Cv, UnitVelocity) {
    GaussianState g{Vec(4), Mat::Identity(4, 4)};
    g.mean << 0, 0, 1, 0;
    const auto out = cv_predict(g, 1.0, Mat::Zero(4, 4));
    Vec expected(4);
    expected << 1, 0, 1, 0;
    EXPECT_TRUE(out.mean.isApprox(expected, 1e-15));
}

TEST(Cv, ZeroVelocityUnchanged) {
    GaussianState g{Vec(4), Mat::Identity(4, 4)};
    g.mean << 3, -2, 0, 0;
    EXPECT_TRUE(cv_predict(g, 0.37, Mat::Zero(4, 4)).mean == g.mean);
}

TEST(Cv, Semigroup) {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const GaussianState g = random_gaussian(rng);
        const Mat z = Mat::Zero(4, 4);
        const auto one = cv_predict(g, 0.5, z);
        const auto two = cv_predict(cv_predict(g, 0.25, z), 0.25, z);
        EXPECT_LT((one.mean - two.mean).norm(), 1e-12);
        EXPECT_LT((one.cov - two.cov).norm(), 1e-10);
    }
}

TEST(Cv, ProcessNoiseIsDwna) {
    const Mat q = cv_process_noise(0.5, 2.0);
    const double s2 = 4.0, dt = 0.5;
    EXPECT_NEAR(q(0, 0), s2 * std::pow(dt, 4) / 4.0, 1e-15);
    EXPECT_NEAR(q(0, 2), s2 * std::pow(dt, 3) / 2.0, 1e-15);
    EXPECT_NEAR(q(2, 2), s2 * dt * dt, 1e-15);
    EXPECT_EQ(q(0, 1), 0.0);
}

TEST(NeighborWeights, Examples) {
    const Eigen::Vector2d o(0, 0);
    const Vec w = neighbor_weights(o, {{1, 0}, {0, 2}});
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(neighbor_weights(o, {{5, 5}})[0], 1.0);
    const Vec c = neighbor_weights(o, {{0, 0}, {1, 0}});
    EXPECT_GT(c[0], 0.999);
    EXPECT_NEAR(c.sum(), 1.0, 1e-15);
    EXPECT_EQ(neighbor_weights(o, {}).size(), 0);
}

TEST(MotionForward, ZeroWeightsHalveHidden) {
    Rng rng(2);
    MotionParams p = zeros_like(make_motion_params(8, 10, MotionFrame::Absolute, 0.5, rng));
    const Vec h = random_matrix(8, 1, rng);
    const auto out = motion_forward(random_state(rng), random_matrix(4, 3, rng), h, p);
    EXPECT_LT((out.h_next - 0.5 * h).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MotionForward, ZeroWeightsZeroHiddenGiveDecoderBias) {
    Rng rng(3);
    MotionParams p = zeros_like(make_motion_params(8, 10, MotionFrame::Absolute, 0.5, rng));
    Vec bias(4);
    bias << 1.5, -2.0, 0.25, 3.0;
    p.decoder.layers.back().bias = bias;
    const auto out = motion_forward(random_state(rng), Mat(4, 0), Vec::Zero(8), p);
    EXPECT_TRUE(out.x_next.col(0) == bias);
    EXPECT_TRUE(out.h_next.isZero(0.0));
}

TEST(MotionForward, LinearModeIsCv) {
    Rng rng(4);
    const MotionParams p = linear_mode_params(16, 10, 0.5, rng);
    const Vec x = random_state(rng);
    const auto out = motion_forward(x, random_matrix(4, 2, rng), random_matrix(16, 1, rng), p);
    EXPECT_TRUE(out.x_next.col(0).isApprox(cv_transition(0.5) * x, 1e-15));
}

TEST(MotionForward, EquidistantNeighborPermutation) {
    Rng rng(5);
    for (MotionFrame f : {MotionFrame::Absolute, MotionFrame::Local}) {
        const MotionParams p = make_motion_params(16, 10, f, 0.5, rng);
        const Vec x = random_state(rng);
        Mat s(4, 3);
        s.col(0) << x[0] + 3.0, x[1], 1.0, 0.5;
        s.col(1) << x[0], x[1] - 3.0, -2.0, 0.0;
        s.col(2) << x[0] + 1.0, x[1] + 1.0, 0.3, 0.3;
        Mat t = s;
        t.col(0).swap(t.col(1));
        const Vec h = random_matrix(16, 1, rng, 0.3);
        const auto a = motion_forward(x, s, h, p, x.head(2));
        const auto b = motion_forward(x, t, h, p, x.head(2));
        EXPECT_LT((a.x_next - b.x_next).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((a.h_next - b.h_next).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(MotionForward, DimensionMismatch) {
    Rng rng(6);
    const MotionParams p = make_motion_params(8, 10, MotionFrame::Absolute, 0.5, rng);
    EXPECT_EQ(error_code_of([&] { (void)motion_forward(Vec::Zero(4), Mat(4, 0), Vec::Zero(5), p); }),
              ErrorCode::DimensionMismatch);
    EXPECT_EQ(error_code_of([&] { (void)motion_forward(Vec::Zero(3), Mat(4, 0), Vec::Zero(8), p); }),
              ErrorCode::DimensionMismatch);
}

TEST(MotionBackward, GradientCheck) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (MotionFrame f : {MotionFrame::Absolute, MotionFrame::Local}) {
            Rng rng(300 + seed);
            MotionParams p = make_motion_params(6, 10, f, 0.5, rng);
            MotionBatch in;
            in.x = random_matrix(4, 3, rng, 2.0);
            in.h = random_matrix(6, 3, rng, 0.5);
            in.origin = in.x.topRows(2) - 0.5 * in.x.bottomRows(2);
            in.nbr = random_matrix(4, 4, rng, 3.0);
            in.nbr_begin = {0, 2, 2, 4};
            const Mat cx = random_matrix(4, 3, rng);
            const Mat ch = random_matrix(6, 3, rng);
            MotionTape tape;
            (void)motion_forward_batch(p, in, &tape);
            MotionParams grads = zeros_like(p);
            Mat dh;
            motion_backward(p, in, tape, cx, ch, grads, &dh);
            auto loss = [&] {
                const auto r = motion_forward_batch(p, in);
                return (r.x_next.array() * cx.array()).sum() + (r.h_next.array() * ch.array()).sum();
            };
            std::vector<nn::TensorRef> pr, gr;
            collect(p, "m", pr);
            collect(grads, "m", gr);
            std::string worst;
            EXPECT_LT(gradient_check(pr, gr, loss, 1e-5, &worst), 1e-4) << worst;
            EXPECT_LT(input_gradient_check(in.h, dh, loss), 1e-4);
        }
    }
}

TEST(SpPredict, LinearModeMatchesKalman) {
    Rng rng(7);
    const Mat q = cv_process_noise(0.5, 1.5);
    for (int t = 0; t < 100; ++t) {
        const MotionParams p = linear_mode_params(8, 10, 0.5, rng);
        const MotionPrior po = random_prior(p, rng);
        const NeighborSet nb = random_neighbors(t % 11, rng);
        const auto kf = kalman_predict(po.gaussian, 0.5, q);
        for (auto s : {PredictionStrategy::JointSp, PredictionStrategy::ObjectSp}) {
            const auto out = sp_predict(po, nb, p, q, 0.999, UTParams{}, s);
            EXPECT_LT(rel(out.gaussian.mean, kf.mean), 1e-8);
            EXPECT_LT(rel(out.gaussian.cov, kf.cov), 1e-8);
        }
        const auto mo = sp_predict(po, nb, p, q, 0.999, UTParams{}, PredictionStrategy::MeanOnly);
        EXPECT_LT(rel(mo.gaussian.mean, kf.mean), 1e-12);
        EXPECT_LT(rel(mo.gaussian.cov, q), 1e-12);
    }
}

TEST(SpPredict, Existence) {
    Rng rng(8);
    const MotionParams p = make_motion_params(8, 10, MotionFrame::Local, 0.5, rng);
    MotionPrior po = random_prior(p, rng);
    po.existence = 1.0;
    const auto out = sp_predict(po, {}, p, Mat::Zero(4, 4), 0.999, UTParams{}, PredictionStrategy::ObjectSp);
    EXPECT_DOUBLE_EQ(out.existence, 0.999);
    po.existence = 0.3;
    const auto out2 = sp_predict(po, {}, p, Mat::Zero(4, 4), 0.999, UTParams{}, PredictionStrategy::ObjectSp);
    EXPECT_LE(out2.existence, 0.3);
    EXPECT_GE(out2.existence, 0.0);
}

TEST(SpPredict, ZeroNeighborsJointEqualsObject) {
    Rng rng(9);
    const Mat q = cv_process_noise(0.5, 1.0);
    for (int t = 0; t < 10; ++t) {
        const MotionParams p = make_motion_params(8, 10, MotionFrame::Local, 0.5, rng);
        const MotionPrior po = random_prior(p, rng);
        const auto a = sp_predict(po, {}, p, q, 0.999, UTParams{}, PredictionStrategy::JointSp);
        const auto b = sp_predict(po, {}, p, q, 0.999, UTParams{}, PredictionStrategy::ObjectSp);
        EXPECT_LT(rel(a.gaussian.mean, b.gaussian.mean), 1e-12);
        EXPECT_LT(rel(a.gaussian.cov, b.gaussian.cov), 1e-12);
        EXPECT_LT(rel(a.hidden, b.hidden), 1e-12);
    }
}

TEST(SpPredict, ZeroNeighborCovarianceJointEqualsObject) {
    Rng rng(10);
    const Mat q = cv_process_noise(0.5, 1.0);
    for (int t = 0; t < 10; ++t) {
        const MotionParams p = make_motion_params(8, 10, MotionFrame::Local, 0.5, rng);
        const MotionPrior po = random_prior(p, rng);
        NeighborSet nb = random_neighbors(1 + t % 5, rng);
        for (auto& s : nb.states) s.cov.setZero();
        const auto a = sp_predict(po, nb, p, q, 0.999, UTParams{}, PredictionStrategy::JointSp);
        const auto b = sp_predict(po, nb, p, q, 0.999, UTParams{}, PredictionStrategy::ObjectSp);
        EXPECT_LT(rel(a.gaussian.mean, b.gaussian.mean), 1e-8);
        EXPECT_LT(rel(a.gaussian.cov, b.gaussian.cov), 1e-8);
        EXPECT_LT(rel(a.hidden, b.hidden), 1e-8);
    }
}

TEST(SpPredict, CovarianceDominatesProcessNoise) {
    Rng rng(11);
    const Mat q = cv_process_noise(0.5, 1.5);
    for (int t = 0; t < 30; ++t) {
        const MotionParams p = make_motion_params(8, 10, t % 2 ? MotionFrame::Local : MotionFrame::Absolute, 0.5, rng);
        const MotionPrior po = random_prior(p, rng);
        const NeighborSet nb = random_neighbors(t % 4, rng);
        for (auto s : {PredictionStrategy::JointSp, PredictionStrategy::ObjectSp, PredictionStrategy::MeanOnly}) {
            const auto out = sp_predict(po, nb, p, q, 0.999, UTParams{}, s);
            const Mat d = out.gaussian.cov - q;
            EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat>(d).eigenvalues().minCoeff(), -1e-9);
            EXPECT_TRUE(out.hidden.allFinite());
            EXPECT_TRUE((out.gaussian.cov - out.gaussian.cov.transpose()).isZero(0.0));
        }
    }
}

TEST(SpPredict, HiddenIsWeightedSigmaPointAverage) {
    // With zero GRU weights every sigma point returns 0.5 h, so the weighted
    // average must too (weights sum to 1).
    Rng rng(12);
    MotionParams p = make_motion_params(8, 10, MotionFrame::Local, 0.5, rng);
    p.gru = nn::zeros_like(p.gru);
    const MotionPrior po = random_prior(p, rng);
    const auto out = sp_predict(po, random_neighbors(3, rng), p, Mat::Zero(4, 4), 0.999, UTParams{},
                                PredictionStrategy::JointSp);
    EXPECT_LT((out.hidden - 0.5 * po.hidden).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpPredict, BackwardGradientCheck) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (auto s : {PredictionStrategy::JointSp, PredictionStrategy::ObjectSp, PredictionStrategy::MeanOnly}) {
            Rng rng(400 + seed);
            MotionParams p = make_motion_params(6, 10, MotionFrame::Local, 0.5, rng);
            const MotionPrior po = random_prior(p, rng);
            const NeighborSet nb = random_neighbors(2, rng);
            const Vec dmean = random_matrix(4, 1, rng);
            MotionParams grads = zeros_like(p);
            sp_predict_backward(po, nb, p, UTParams{}, s, dmean, grads);
            auto loss = [&] {
                return dmean.dot(sp_predict(po, nb, p, Mat::Zero(4, 4), 1.0, UTParams{}, s).gaussian.mean);
            };
            std::vector<nn::TensorRef> pr, gr;
            collect(p, "m", pr);
            collect(grads, "m", gr);
            std::string worst;
            EXPECT_LT(gradient_check(pr, gr, loss, 1e-5, &worst), 1e-4) << worst;
        }
    }
}

TEST(Strategy, NamesRoundTrip) {
    for (auto s : {PredictionStrategy::MeanOnly, PredictionStrategy::ObjectSp, PredictionStrategy::JointSp})
        EXPECT_EQ(strategy_from_name(strategy_name(s)), s);
    EXPECT_EQ(error_code_of([] { (void)strategy_from_name("bogus"); }), ErrorCode::ConfigInvalid);
}
