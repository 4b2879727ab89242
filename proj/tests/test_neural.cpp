#include "bpmot/model.hpp"
#include "bpmot/neural.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace bpmot;
using namespace bpmot::nn;
using bpmot::testing::error_code_of;
using bpmot::testing::gradient_check;
using bpmot::testing::input_gradient_check;
using bpmot::testing::random_matrix;

namespace {

double weighted_sum(const Mat& y, const Mat& c) { return (y.array() * c.array()).sum(); }

GruParams random_gru(int in, int hid, Rng& rng) {
    GruParams p = make_gru(in, hid, rng);
    // Larger biases push the gates away from 0.5 so every path is exercised.
    for (Vec* b : {&p.bz, &p.br, &p.bh})
        for (Eigen::Index i = 0; i < b->size(); ++i) (*b)[i] = rng.normal() * 0.5;
    return p;
}

}  // namespace

TEST(Mlp, IdentityLayerIsIdentity) {
    Mlp net;
    net.layers.push_back({Mat::Identity(3, 3), Vec::Zero(3), Activation::Identity});
    Mat x(3, 2);
    x << 1, 2, 3, 4, 5, 6;
    EXPECT_TRUE(mlp_forward(net, x) == x);
}

TEST(Mlp, Relu) {
    Mlp net;
    net.layers.push_back({Mat::Identity(2, 2), Vec::Zero(2), Activation::Relu});
    Mat x(2, 1);
    x << -1.0, 2.0;
    const Mat y = mlp_forward(net, x);
    EXPECT_EQ(y(0, 0), 0.0);
    EXPECT_EQ(y(1, 0), 2.0);
}

TEST(Mlp, DimensionMismatch) {
    Rng rng(1);
    const Mlp net = make_mlp({3, 4, 2}, Activation::Relu, Activation::Identity, rng);
    EXPECT_EQ(error_code_of([&] { (void)mlp_forward(net, Mat::Zero(5, 1)); }), ErrorCode::DimensionMismatch);
}

TEST(Mlp, InitWithinFanInBound) {
    Rng rng(2);
    const Mlp net = make_mlp({16, 8, 4}, Activation::Relu, Activation::Identity, rng);
    EXPECT_LE(net.layers[0].weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
    EXPECT_LE(net.layers[1].weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(8.0));
    EXPECT_EQ(net.layers[1].activation, Activation::Identity);
}

TEST(Mlp, InferenceIsPure) {
    Rng rng(3);
    const Mlp net = make_mlp({4, 6, 3}, Activation::Tanh, Activation::Identity, rng);
    const Mat x = random_matrix(4, 5, rng);
    EXPECT_TRUE(mlp_forward(net, x) == mlp_forward(net, x));
}

TEST(Mlp, GradientCheck) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (const Activation act : {Activation::Relu, Activation::Tanh, Activation::Identity}) {
            Rng rng(100 + seed);
            Mlp net = make_mlp({5, 7, 6, 3}, act, Activation::Tanh, rng);
            Mat x = random_matrix(5, 4, rng);
            const Mat c = random_matrix(3, 4, rng);
            MlpTape tape;
            (void)mlp_forward(net, x, &tape);
            Mlp grads = zeros_like(net);
            const Mat dx = mlp_backward(net, tape, c, grads);
            std::vector<TensorRef> pr, gr;
            collect(net, "mlp", pr);
            collect(grads, "mlp", gr);
            auto loss = [&] { return weighted_sum(mlp_forward(net, x), c); };
            std::string worst;
            EXPECT_LT(gradient_check(pr, gr, loss, 1e-5, &worst), 1e-4) << worst;
            EXPECT_LT(input_gradient_check(x, dx, loss), 1e-4);
        }
    }
}

TEST(Gru, ZeroWeightsHalveHidden) {
    Rng rng(4);
    const GruParams p = zeros_like(make_gru(3, 5, rng));
    const Mat h = random_matrix(5, 2, rng);
    const Mat u = random_matrix(3, 2, rng);
    const Mat out = gru_forward(p, u, h);
    EXPECT_LT((out - 0.5 * h).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(gru_forward(p, u, Mat::Zero(5, 2)).isZero(0.0));
}

TEST(Gru, HandEvaluatedSingleUnit) {
    GruParams p;
    p.wz = Mat::Constant(1, 1, 0.5);
    p.uz = Mat::Constant(1, 1, -0.3);
    p.bz = Vec::Constant(1, 0.1);
    p.wr = Mat::Constant(1, 1, 0.2);
    p.ur = Mat::Constant(1, 1, 0.7);
    p.br = Vec::Constant(1, -0.2);
    p.wh = Mat::Constant(1, 1, 1.1);
    p.uh = Mat::Constant(1, 1, 0.4);
    p.bh = Vec::Constant(1, 0.05);
    const double u = 0.8, h = -0.6;
    const double z = 1.0 / (1.0 + std::exp(-(0.5 * u - 0.3 * h + 0.1)));
    const double r = 1.0 / (1.0 + std::exp(-(0.2 * u + 0.7 * h - 0.2)));
    const double c = std::tanh(1.1 * u + 0.4 * r * h + 0.05);
    const double expected = (1.0 - z) * h + z * c;
    const Mat out = gru_forward(p, Mat::Constant(1, 1, u), Mat::Constant(1, 1, h));
    EXPECT_NEAR(out(0, 0), expected, 1e-15);
}

TEST(Gru, GradientCheck) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(200 + seed);
        GruParams p = random_gru(4, 6, rng);
        Mat u = random_matrix(4, 3, rng);
        Mat h = random_matrix(6, 3, rng, 0.5);
        const Mat c = random_matrix(6, 3, rng);
        GruTape tape;
        (void)gru_forward(p, u, h, &tape);
        GruParams grads = zeros_like(p);
        Mat du, dh;
        gru_backward(p, tape, c, grads, du, dh);
        std::vector<TensorRef> pr, gr;
        collect(p, "gru", pr);
        collect(grads, "gru", gr);
        auto loss = [&] { return weighted_sum(gru_forward(p, u, h), c); };
        std::string worst;
        EXPECT_LT(gradient_check(pr, gr, loss, 1e-5, &worst), 1e-4) << worst;
        EXPECT_LT(input_gradient_check(u, du, loss), 1e-4);
        EXPECT_LT(input_gradient_check(h, dh, loss), 1e-4);
    }
}

TEST(Adam, FirstStepMagnitudeIsLr) {
    Vec w = Vec::LinSpaced(5, -1.0, 1.0);
    const Vec w0 = w;
    Vec g = Vec::Ones(5);
    std::vector<TensorRef> pr{{"w", w.data(), 5, 1}}, gr{{"w", g.data(), 5, 1}};
    AdamState st;
    st.lr = 1e-3;
    adam_step(pr, gr, st);
    EXPECT_EQ(st.step, 1);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(w0[i] - w[i], 1e-3, 1e-9);
}

TEST(Adam, ZeroGradsLeaveParams) {
    Vec w = Vec::LinSpaced(3, 0.0, 2.0);
    const Vec w0 = w;
    Vec g = Vec::Zero(3);
    std::vector<TensorRef> pr{{"w", w.data(), 3, 1}}, gr{{"w", g.data(), 3, 1}};
    AdamState st;
    adam_step(pr, gr, st);
    EXPECT_EQ(st.step, 1);
    EXPECT_TRUE(w == w0);
}

TEST(Adam, TwoStepsMatchScalarRecurrence) {
    Vec w(2);
    w << 0.3, -0.7;
    Vec g(2);
    g << 0.25, -2.0;
    std::vector<TensorRef> pr{{"w", w.data(), 2, 1}}, gr{{"w", g.data(), 2, 1}};
    AdamState st;
    st.lr = 0.01;
    adam_step(pr, gr, st);
    adam_step(pr, gr, st);
    for (int i = 0; i < 2; ++i) {
        double x = i == 0 ? 0.3 : -0.7;
        const double gi = g[i];
        double m = 0.0, v = 0.0;
        for (int t = 1; t <= 2; ++t) {
            m = 0.9 * m + 0.1 * gi;
            v = 0.999 * v + 0.001 * gi * gi;
            const double mh = m / (1.0 - std::pow(0.9, t));
            const double vh = v / (1.0 - std::pow(0.999, t));
            x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
        EXPECT_DOUBLE_EQ(w[i], x);
    }
}

TEST(Adam, QuadraticLossNonIncreasing) {
    Rng rng(5);
    Vec w(4);
    for (int i = 0; i < 4; ++i) w[i] = rng.normal() * 3.0;
    Vec target(4);
    target << 1.0, -2.0, 0.5, 3.0;
    Vec g(4);
    std::vector<TensorRef> pr{{"w", w.data(), 4, 1}}, gr{{"w", g.data(), 4, 1}};
    AdamState st;
    st.lr = 0.05;
    double prev = (w - target).squaredNorm();
    for (int s = 0; s < 50; ++s) {
        g = 2.0 * (w - target);
        adam_step(pr, gr, st);
        const double cur = (w - target).squaredNorm();
        EXPECT_LE(cur, prev + 1e-12) << "step " << s;
        prev = cur;
    }
}

TEST(ForwardCounter, CountsCalls) {
    Rng rng(6);
    const Mlp net = make_mlp({2, 2}, Activation::Relu, Activation::Identity, rng);
    reset_forward_call_count();
    (void)mlp_forward(net, Mat::Zero(2, 1));
    (void)gru_forward(make_gru(1, 1, rng), Mat::Zero(1, 1), Mat::Zero(1, 1));
    EXPECT_EQ(forward_call_count(), 2);
}

class Weights : public ::testing::Test {
protected:
    void SetUp() override { dir_ = bpmot::testing::scratch_dir("weights"); }
    std::string dir_;
};

TEST_F(Weights, RoundTripIsBitExact) {
    Rng rng(7);
    NetworkConfig cfg;
    cfg.hidden_dim = 16;
    NetworkParams p = make_network(cfg, rng);
    const std::string path = dir_ + "/w.bin";
    save_weights(p, path);
    NetworkParams q = load_weights(path);
    EXPECT_TRUE(q.config == p.config);
    std::vector<TensorRef> a, b;
    collect_all(p, a);
    collect_all(q, b);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        EXPECT_EQ(a[t].name, b[t].name);
        ASSERT_EQ(a[t].size(), b[t].size());
        EXPECT_EQ(std::memcmp(a[t].data, b[t].data, sizeof(double) * static_cast<std::size_t>(a[t].size())), 0);
    }
    EXPECT_TRUE(std::filesystem::exists(path + ".manifest"));
}

TEST_F(Weights, TruncatedFileIsVersionMismatch) {
    Rng rng(8);
    NetworkConfig cfg;
    cfg.hidden_dim = 8;
    const std::string path = dir_ + "/w.bin";
    save_weights(make_network(cfg, rng), path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    EXPECT_EQ(error_code_of([&] { (void)load_weights(path); }), ErrorCode::FormatVersionMismatch);
}

TEST_F(Weights, HiddenDimMismatchIsShapeMismatch) {
    Rng rng(9);
    NetworkConfig small;
    small.hidden_dim = 32;
    const std::string path = dir_ + "/w.bin";
    save_weights(make_network(small, rng), path);
    NetworkConfig big;
    big.hidden_dim = 64;
    EXPECT_EQ(error_code_of([&] { (void)load_weights(path, &big); }), ErrorCode::ShapeMismatch);
}

TEST_F(Weights, NewerVersionRejected) {
    Rng rng(10);
    NetworkConfig cfg;
    cfg.hidden_dim = 8;
    const std::string path = dir_ + "/w.bin";
    save_weights(make_network(cfg, rng), path);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = kWeightsVersion + 1;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
    f.close();
    EXPECT_EQ(error_code_of([&] { (void)load_weights(path); }), ErrorCode::FormatVersionMismatch);
}

TEST(Network, DepthAndDims) {
    Rng rng(11);
    NetworkConfig cfg;
    const NetworkParams p = make_network(cfg, rng);
    const auto& m = p.motion;
    // Encoder A, Encoder B, GRU, decoder on the deepest path.
    EXPECT_LE(m.encoder_a.layers.size() + 1 + m.decoder.layers.size(), 10u);
    EXPECT_EQ(m.gru.input_dim(), 2 * cfg.hidden_dim);
    EXPECT_EQ(m.gru.hidden_dim(), cfg.hidden_dim);
    EXPECT_EQ(m.decoder.in_dim(), cfg.hidden_dim);
    EXPECT_EQ(m.decoder.out_dim(), motion::kStateDim);
    std::vector<TensorRef> all;
    NetworkParams q = p;
    collect_all(q, all);
    for (const auto& t : all) EXPECT_TRUE(Eigen::Map<Mat>(t.data, t.rows, t.cols).allFinite()) << t.name;
}
