#include "bpmot/errors.hpp"
#include "bpmot/model.hpp"
#include "bpmot/neural.hpp"
#include "bpmot/tracker.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace bpmot;
using namespace bpmot::tracker;
using measurement::Measurement;

namespace {

TrackerConfig small_config(int particles = 2000) {
    TrackerConfig cfg;
    cfg.particle_count = particles;
    cfg.mu_fp = 0.5;
    cfg.mu_n = 0.5;
    return cfg;
}

Measurement meas_at(double x, double y, double vx, double vy, double score = 0.9) {
    Measurement m;
    m.z = Vec(4);
    m.z << x, y, vx, vy;
    m.score = score;
    return m;
}

PoState po_with(int id, double existence, const Vec& mean) {
    PoState po;
    po.id = id;
    po.existence = existence;
    po.gaussian.mean = mean;
    po.gaussian.cov = Mat::Identity(4, 4);
    return po;
}

Vec vec4(double a, double b, double c, double d) {
    Vec v(4);
    v << a, b, c, d;
    return v;
}

}  // namespace

TEST(Tracker, BootstrapFrameCreatesOnePoPerMeasurement) {
    TrackerState state;
    Rng rng(3);
    const auto cfg = small_config(500);
    std::vector<Measurement> meas{meas_at(0, 0, 1, 0), meas_at(10, 5, 0, 1), meas_at(-20, 3, 2, 2)};
    const auto r = step(state, meas, nullptr, cfg, nullptr, rng);
    EXPECT_EQ(r.diag.num_legacy, 0);
    EXPECT_EQ(r.diag.num_new, 3);
    ASSERT_EQ(state.pos.size(), 3u);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_EQ(state.pos[j].id, static_cast<int>(j));
        EXPECT_GE(state.pos[j].existence, 0.0);
        EXPECT_LE(state.pos[j].existence, 1.0);
    }
}

TEST(Tracker, MbEqualsNeWithNeutralFactorsAndLinearMotion) {
    sim::ScenarioConfig sc;
    sc.frames = 12;
    sc.initial_objects = 5;
    const auto scene = sim::simulate_scene(sc, 17);
    TrackerConfig mb = config_for(sc);
    mb.particle_count = 1000;
    TrackerConfig ne = mb;
    ne.mode = Mode::Ne;
    ne.neutral_factors = true;

    NetworkConfig nc;
    nc.hidden_dim = 16;
    nc.descriptor_dim = sc.descriptor_dim;
    Rng wrng(5);
    NetworkParams net = make_network(nc, wrng);
    net.motion = motion::linear_mode_params(nc.hidden_dim, nc.max_neighbors, sc.dt, wrng);
    net.motion.pos_scale = nc.pos_scale;
    net.motion.vel_scale = nc.vel_scale;
    net.motion.nbr_scale = nc.nbr_scale;

    // mean-only carries no prior spread, so only the sigma-point strategies reduce to CV.
    for (const auto strategy : {motion::PredictionStrategy::ObjectSp, motion::PredictionStrategy::JointSp}) {
        ne.strategy = strategy;
        const auto a = run_scene(scene, mb, nullptr, 9);
        const auto b = run_scene(scene, ne, &net, 9);
        ASSERT_EQ(a.tracks.size(), b.tracks.size());
        for (std::size_t k = 0; k < a.tracks.size(); ++k) {
            ASSERT_EQ(a.tracks[k].size(), b.tracks[k].size()) << "frame " << k;
            for (std::size_t t = 0; t < a.tracks[k].size(); ++t) {
                EXPECT_EQ(a.tracks[k][t].id, b.tracks[k][t].id);
                EXPECT_NEAR(a.tracks[k][t].existence, b.tracks[k][t].existence, 1e-6);
                EXPECT_LT((a.tracks[k][t].state - b.tracks[k][t].state).norm(), 1e-5);
            }
        }
    }
}

TEST(Tracker, SingleObjectKeepsOneIdentity) {
    TrackerConfig cfg = small_config(2000);
    cfg.p_d = 1.0;
    cfg.mu_fp = 1e-3;
    TrackerState state;
    Rng rng(11);
    Rng noise(12);
    Vec x = vec4(-20, -10, 3, 1);
    const Mat f = motion::cv_transition(cfg.dt);
    std::set<int> ids;
    bool declared = false;
    for (int k = 0; k < 50; ++k) {
        std::vector<Measurement> meas{meas_at(x[0] + 0.4 * noise.normal(), x[1] + 0.4 * noise.normal(),
                                              x[2] + 0.5 * noise.normal(), x[3] + 0.5 * noise.normal())};
        const auto r = step(state, meas, nullptr, cfg, nullptr, rng);
        if (!r.estimates.empty()) declared = true;
        if (declared) {
            ASSERT_EQ(r.estimates.size(), 1u) << "frame " << k;
            ids.insert(r.estimates[0].id);
            EXPECT_LT((r.estimates[0].state.head<2>() - x.head<2>()).norm(), 2.0);
        }
        x = f * x;
    }
    EXPECT_TRUE(declared);
    EXPECT_EQ(ids.size(), 1u);
}

TEST(Tracker, DeclareSkipsBelowThreshold) {
    const auto cfg = small_config();
    std::vector<PoState> s{po_with(0, 0.49, vec4(0, 0, 0, 0)), po_with(1, 0.5, vec4(1, 1, 0, 0))};
    const auto est = declare_and_estimate(s, cfg);
    ASSERT_EQ(est.size(), 1u);
    EXPECT_EQ(est[0].id, 1);
}

TEST(Tracker, DeclareBimodalCloudGivesMidpoint) {
    const auto cfg = small_config();
    PoState po = po_with(0, 0.9, vec4(0, 0, 0, 0));
    po.particles.particles = Mat(4, 2);
    po.particles.particles.col(0) = vec4(-3, 2, 1, 0);
    po.particles.particles.col(1) = vec4(5, 4, -1, 2);
    po.particles.weights = Vec::Constant(2, 0.5);
    const auto est = declare_and_estimate({po}, cfg);
    ASSERT_EQ(est.size(), 1u);
    EXPECT_LT((est[0].state - vec4(1, 3, 0, 1)).norm(), 1e-12);
}

TEST(Tracker, DeclareMeanConcentratesOnGaussianMean) {
    const auto cfg = small_config();
    const int n = 10000;
    GaussianState g{vec4(3, -2, 1, 0.5), Vec(vec4(4, 1, 0.25, 0.25)).asDiagonal()};
    Rng rng(21);
    PoState po = po_with(0, 0.9, g.mean);
    po.particles.particles = sample_gaussian(g, n, rng);
    po.particles.weights = Vec::Constant(n, 1.0 / n);
    const auto est = declare_and_estimate({po}, cfg);
    ASSERT_EQ(est.size(), 1u);
    for (int d = 0; d < 4; ++d) {
        EXPECT_LT(std::abs(est[0].state[d] - g.mean[d]), 3.0 * std::sqrt(g.cov(d, d) / n)) << d;
    }
}

TEST(Tracker, PruneThresholdIsClosed) {
    const auto cfg = small_config();
    std::vector<PoState> s{po_with(0, 1e-5, vec4(0, 0, 0, 0)), po_with(1, cfg.t_pru, vec4(0, 0, 0, 0)),
                           po_with(2, 0.3, vec4(0, 0, 0, 0))};
    const auto out = prune(s, cfg);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].id, 1);
    EXPECT_EQ(out[1].id, 2);
    EXPECT_TRUE(prune({}, cfg).empty());
}

TEST(Tracker, PoCountIdentityAndIncreasingIds) {
    sim::ScenarioConfig sc;
    sc.frames = 15;
    const auto scene = sim::simulate_scene(sc, 4);
    TrackerConfig cfg = config_for(sc);
    cfg.particle_count = 500;
    TrackerState state;
    Rng rng(8);
    int last_id = -1;
    int max_id = 0;
    for (const auto& frame : scene.frames) {
        const std::size_t before = state.pos.size();
        const auto r = step(state, frame.meas, &frame.map, cfg, nullptr, rng);
        EXPECT_EQ(static_cast<int>(state.pos.size()),
                  static_cast<int>(before) - r.diag.num_dropped + static_cast<int>(frame.meas.size()) -
                      r.diag.num_pruned);
        for (const auto& po : state.pos) {
            EXPECT_GT(po.id, last_id);
            last_id = po.id;
            EXPECT_GE(po.existence, 0.0);
            EXPECT_LE(po.existence, 1.0);
            EXPECT_TRUE(po.gaussian.mean.allFinite());
        }
        if (!state.pos.empty()) last_id = state.pos.front().id - 1;
        EXPECT_EQ(state.next_id, max_id + static_cast<int>(frame.meas.size()));
        max_id = state.next_id;
    }
}

TEST(Tracker, SceneRunIsDeterministic) {
    sim::ScenarioConfig sc;
    sc.frames = 10;
    const auto scene = sim::simulate_scene(sc, 6);
    TrackerConfig cfg = config_for(sc);
    cfg.particle_count = 500;
    const auto a = run_scene(scene, cfg, nullptr, 42);
    const auto b = run_scene(scene, cfg, nullptr, 42);
    ASSERT_EQ(a.tracks.size(), b.tracks.size());
    for (std::size_t k = 0; k < a.tracks.size(); ++k) {
        ASSERT_EQ(a.tracks[k].size(), b.tracks[k].size());
        for (std::size_t t = 0; t < a.tracks[k].size(); ++t) {
            EXPECT_EQ(a.tracks[k][t].id, b.tracks[k][t].id);
            EXPECT_EQ(a.tracks[k][t].existence, b.tracks[k][t].existence);
            EXPECT_EQ(a.tracks[k][t].state, b.tracks[k][t].state);
        }
    }
}

TEST(Tracker, MbMakesNoNetworkCalls) {
    sim::ScenarioConfig sc;
    sc.frames = 8;
    const auto scene = sim::simulate_scene(sc, 2);
    TrackerConfig cfg = config_for(sc);
    cfg.particle_count = 300;
    NetworkConfig nc;
    nc.hidden_dim = 8;
    Rng wrng(1);
    const NetworkParams net = make_network(nc, wrng);
    nn::reset_forward_call_count();
    (void)run_scene(scene, cfg, &net, 1);
    EXPECT_EQ(nn::forward_call_count(), 0);
    cfg.mode = Mode::Ne;
    (void)run_scene(scene, cfg, &net, 1);
    EXPECT_GT(nn::forward_call_count(), 0);
}

TEST(Tracker, ExistenceDecaysOverEmptyFrames) {
    TrackerConfig cfg = small_config(1000);
    TrackerState state;
    Rng rng(5);
    (void)step(state, {meas_at(0, 0, 1, 1)}, nullptr, cfg, nullptr, rng);
    (void)step(state, {meas_at(0.5, 0.5, 1, 1)}, nullptr, cfg, nullptr, rng);
    ASSERT_FALSE(state.pos.empty());
    const int id = state.pos.front().id;
    double prev = state.pos.front().existence;
    for (int k = 0; k < 10; ++k) {
        (void)step(state, {}, nullptr, cfg, nullptr, rng);
        if (state.pos.empty() || state.pos.front().id != id) break;
        EXPECT_LT(state.pos.front().existence, prev);
        prev = state.pos.front().existence;
    }
}

TEST(Tracker, NeuralModesRequireWeights) {
    TrackerConfig cfg = small_config(100);
    TrackerState state;
    Rng rng(1);
    for (const auto m : {Mode::Ne, Mode::NeMotion, Mode::NeMeas}) {
        cfg.mode = m;
        EXPECT_EQ(bpmot::testing::error_code_of([&] { (void)step(state, {meas_at(0, 0, 0, 0)}, nullptr, cfg, nullptr, rng); }),
                  ErrorCode::MissingWeights);
    }
}

TEST(Tracker, SelectNeighborsNearestConfident) {
    TrackerConfig cfg = small_config();
    cfg.max_neighbors = 3;
    std::vector<PoState> s;
    s.push_back(po_with(0, 0.9, vec4(0, 0, 0, 0)));
    s.push_back(po_with(1, 0.9, vec4(5, 0, 0, 0)));
    s.push_back(po_with(2, 0.4, vec4(1, 0, 0, 0)));  // not confident
    s.push_back(po_with(3, 0.9, vec4(0, 2, 0, 0)));
    s.push_back(po_with(4, 0.5, vec4(-3, 0, 0, 0)));
    s.push_back(po_with(5, 0.9, vec4(10, 10, 0, 0)));
    const auto n = select_neighbors(s, 0, cfg);
    EXPECT_EQ(n, (std::vector<int>{3, 4, 1}));
    cfg.max_neighbors = 0;
    EXPECT_TRUE(select_neighbors(s, 0, cfg).empty());
}

TEST(Tracker, ModeNamesRoundTrip) {
    for (const auto m : {Mode::Mb, Mode::Ne, Mode::NeMotion, Mode::NeMeas}) {
        EXPECT_EQ(mode_from_name(mode_name(m)), m);
    }
    EXPECT_EQ(bpmot::testing::error_code_of([] { (void)mode_from_name("bogus"); }), ErrorCode::ConfigInvalid);
}

TEST(Tracker, ValidateRejectsBadThresholds) {
    TrackerConfig cfg;
    cfg.t_pru = 0.6;
    EXPECT_EQ(bpmot::testing::error_code_of([&] { validate(cfg); }), ErrorCode::ConfigInvalid);
    cfg = TrackerConfig();
    cfg.dt = 0.0;
    EXPECT_EQ(bpmot::testing::error_code_of([&] { validate(cfg); }), ErrorCode::ConfigInvalid);
    EXPECT_NO_THROW(validate(TrackerConfig()));
}
