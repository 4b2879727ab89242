#include "bpmot/tracker.hpp"

#include "bpmot/association.hpp"
#include "bpmot/errors.hpp"
#include "bpmot/log.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace bpmot::tracker {
namespace {

using measurement::Measurement;

struct Shapes {
    Mat roi;
    Mat features;
    std::vector<bool> oor;
};

Shapes extract_shapes(const sim::FeatureMap* map, const measurement::Region& region,
                      const std::vector<Eigen::Vector2d>& pos, const std::vector<measurement::Box>& boxes,
                      const nn::Mlp& head) {
    const auto n = static_cast<Eigen::Index>(pos.size());
    const Eigen::Index d_in = head.in_dim();
    Shapes s;
    s.roi = Mat::Zero(d_in, n);
    s.oor.assign(pos.size(), true);
    s.features = Mat::Zero(head.out_dim(), n);
    if (map == nullptr || map->rows < 2 || map->cols < 2 || n == 0) return s;
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto r = sim::roi_sample(*map, region, pos[static_cast<std::size_t>(c)].x(),
                                       pos[static_cast<std::size_t>(c)].y(), boxes[static_cast<std::size_t>(c)]);
        s.oor[static_cast<std::size_t>(c)] = r.out_of_region;
        if (!r.out_of_region) s.roi.col(c) = r.samples;
    }
    s.features = nn::mlp_forward(head, s.roi);
    for (Eigen::Index c = 0; c < n; ++c) {
        if (s.oor[static_cast<std::size_t>(c)]) s.features.col(c).setZero();
    }
    return s;
}

}  // namespace

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Mb: return "mb";
        case Mode::Ne: return "ne";
        case Mode::NeMotion: return "ne-motion";
        case Mode::NeMeas: return "ne-meas";
    }
    return "?";
}

Mode mode_from_name(const std::string& s) {
    if (s == "mb") return Mode::Mb;
    if (s == "ne") return Mode::Ne;
    if (s == "ne-motion") return Mode::NeMotion;
    if (s == "ne-meas") return Mode::NeMeas;
    throw Error(ErrorCode::ConfigInvalid, "unknown mode '" + s + "' (expected mb|ne|ne-motion|ne-meas)");
}

bool uses_neural_motion(Mode m) { return m == Mode::Ne || m == Mode::NeMotion; }
bool uses_factors(Mode m) { return m == Mode::Ne || m == Mode::NeMeas; }

TrackerConfig::TrackerConfig() {
    Vec d(4);
    d << 0.16, 0.16, 0.25, 0.25;
    sigma_r = d.asDiagonal();
    q = motion::cv_process_noise(dt, 1.5);
}

void validate(const TrackerConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw Error(ErrorCode::ConfigInvalid, "tracker." + field + ": " + why);
    };
    if (!(c.p_s > 0.0 && c.p_s <= 1.0)) fail("p_s", "must be in (0, 1]");
    if (!(c.p_d >= 0.0 && c.p_d <= 1.0)) fail("p_d", "must be in [0, 1]");
    if (!(c.t_dec > 0.0 && c.t_dec < 1.0)) fail("t_dec", "must be in (0, 1)");
    if (!(c.t_pru > 0.0 && c.t_pru < 1.0)) fail("t_pru", "must be in (0, 1)");
    if (!(c.t_pru < c.t_dec)) fail("t_pru", "must be below t_dec");
    if (c.max_neighbors < 0) fail("max_neighbors", "must be >= 0");
    if (c.particle_count < 1) fail("particle_count", "must be >= 1");
    if (!(c.dt > 0.0)) fail("dt", "must be > 0");
    if (c.sigma_r.rows() != 4 || c.sigma_r.cols() != 4) fail("sigma_r", "must be 4x4");
    if (c.q.rows() != 4 || c.q.cols() != 4) fail("q", "must be 4x4");
    for (int i = 0; i < 4; ++i) {
        if (!(c.sigma_r(i, i) > 0.0)) fail("sigma_r", "diagonal must be > 0");
    }
    if (!(c.mu_fp > 0.0)) fail("mu_fp", "must be > 0");
    if (!(c.mu_n > 0.0)) fail("mu_n", "must be > 0");
    if (!(c.region.xmax > c.region.xmin && c.region.ymax > c.region.ymin && c.region.vmax > 0.0)) {
        fail("region", "degenerate");
    }
    if (!(c.ut.alpha > 0.0)) fail("ut.alpha", "must be > 0");
    if (c.bp_max_iter < 1) fail("bp_max_iter", "must be >= 1");
    if (!(c.bp_tol > 0.0)) fail("bp_tol", "must be > 0");
    if (!(c.score_keep >= 0.0 && c.score_keep <= 1.0)) fail("score_keep", "must be in [0, 1]");
}

measurement::MeasurementModel measurement_model(const TrackerConfig& cfg) {
    measurement::MeasurementModel m;
    m.sigma_r = cfg.sigma_r;
    m.p_d = cfg.p_d;
    m.clutter.mu_fp = cfg.mu_fp;
    m.clutter.region = cfg.region;
    m.birth.mu_n = cfg.mu_n;
    m.birth.region = cfg.region;
    return m;
}

std::vector<int> select_neighbors(const std::vector<PoState>& state, std::size_t i, const TrackerConfig& cfg) {
    std::vector<std::pair<double, int>> cand;
    const Eigen::Vector2d p = state[i].gaussian.mean.head<2>();
    for (std::size_t k = 0; k < state.size(); ++k) {
        if (k == i || state[k].existence < cfg.neighbor_existence) continue;
        cand.emplace_back((state[k].gaussian.mean.head<2>() - p).norm(), static_cast<int>(k));
    }
    std::sort(cand.begin(), cand.end());
    std::vector<int> out;
    for (std::size_t k = 0; k < cand.size() && static_cast<int>(k) < cfg.max_neighbors; ++k) {
        out.push_back(cand[k].second);
    }
    return out;
}

std::vector<Estimate> declare_and_estimate(const std::vector<PoState>& state, const TrackerConfig& cfg) {
    std::vector<Estimate> out;
    for (const auto& po : state) {
        if (po.existence < cfg.t_dec) continue;
        Estimate e;
        e.id = po.id;
        e.state = po.particles.size() > 0 ? Vec(po.particles.particles * po.particles.weights) : po.gaussian.mean;
        e.existence = po.existence;
        e.score = po.score;
        e.box = po.last_box;
        e.class_id = po.class_id;
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<PoState> prune(std::vector<PoState> state, const TrackerConfig& cfg) {
    std::erase_if(state, [&](const PoState& po) { return po.existence < cfg.t_pru; });
    return state;
}

StepResult step(TrackerState& state, const std::vector<Measurement>& meas_in, const sim::FeatureMap* map,
                const TrackerConfig& cfg, const NetworkParams* net, Rng& rng) {
    const bool neural_motion = uses_neural_motion(cfg.mode);
    const bool factors_on = uses_factors(cfg.mode) && !cfg.neutral_factors;
    if ((neural_motion || factors_on) && net == nullptr) {
        throw Error(ErrorCode::MissingWeights, std::string("mode ") + mode_name(cfg.mode) + " needs network weights");
    }
    const measurement::MeasurementModel model = measurement_model(cfg);
    const auto nj = static_cast<Eigen::Index>(meas_in.size());
    StepResult result;
    Diagnostics& diag = result.diag;

    // Prediction.
    const std::vector<PoState>& prior = state.pos;
    std::vector<PoState> legacy;
    std::vector<motion::MotionPrior> priors;
    std::vector<motion::NeighborSet> nbr_sets;
    std::vector<Vec> predicted_means;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        const PoState& po = prior[i];
        motion::MotionPrior mp{po.gaussian, po.existence, po.hidden, po.origin};
        motion::NeighborSet nbrs;
        try {
            motion::PredictedPo pred;
            if (neural_motion) {
                for (const int k : select_neighbors(prior, i, cfg)) {
                    nbrs.states.push_back(prior[static_cast<std::size_t>(k)].gaussian);
                }
                pred = motion::sp_predict(mp, nbrs, net->motion, cfg.q, cfg.p_s, cfg.ut, cfg.strategy);
            } else {
                pred.gaussian = motion::cv_predict(po.gaussian, cfg.dt, cfg.q);
                pred.existence = po.existence * cfg.p_s;
                pred.hidden = po.hidden;
            }
            PoState next = po;
            next.gaussian = pred.gaussian;
            next.existence = pred.existence;
            next.hidden = pred.hidden;
            next.origin = po.gaussian.mean.head<2>();
            next.particles.particles = sample_gaussian(pred.gaussian, cfg.particle_count, rng);
            next.particles.weights = Vec::Constant(cfg.particle_count, 1.0 / cfg.particle_count);
            legacy.push_back(std::move(next));
            priors.push_back(std::move(mp));
            nbr_sets.push_back(std::move(nbrs));
            predicted_means.push_back(pred.gaussian.mean);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NotPositiveDefinite) throw;
            log::warn("step: dropping PO " + std::to_string(po.id) + " after failed covariance repair");
            ++diag.num_dropped;
        }
    }
    const auto ni = static_cast<Eigen::Index>(legacy.size());
    diag.num_legacy = static_cast<int>(ni);

    // Enhancement factors.
    std::vector<Measurement> meas = meas_in;
    measurement::EnhancementFactors factors = measurement::EnhancementFactors::neutral(ni, nj);
    std::vector<measurement::ObjectFeatures> obj_feat;
    std::vector<measurement::MeasurementFeatures> meas_feat;
    Shapes obj_shapes;
    Shapes meas_shapes;
    if (factors_on) {
        std::vector<Eigen::Vector2d> pos;
        std::vector<measurement::Box> boxes;
        for (const auto& m : meas) {
            pos.emplace_back(m.z[0], m.z[1]);
            boxes.push_back(m.box);
        }
        meas_shapes = extract_shapes(map, cfg.region, pos, boxes, net->shape_head);
        for (Eigen::Index j = 0; j < nj; ++j) {
            meas[static_cast<std::size_t>(j)].shape_feature = meas_shapes.features.col(j);
            meas_feat.push_back(measurement::features_of(meas[static_cast<std::size_t>(j)]));
        }
        pos.clear();
        boxes.clear();
        for (const auto& po : legacy) {
            pos.emplace_back(po.gaussian.mean.head<2>());
            boxes.push_back(po.last_box);
        }
        obj_shapes = extract_shapes(map, cfg.region, pos, boxes, net->shape_head);
        for (Eigen::Index i = 0; i < ni; ++i) {
            measurement::ObjectFeatures f;
            const auto& g = legacy[static_cast<std::size_t>(i)].gaussian;
            f.position = g.mean.head<2>();
            f.velocity = g.mean.segment<2>(2);
            f.box = legacy[static_cast<std::size_t>(i)].last_box;
            f.shape = obj_shapes.features.col(i);
            obj_feat.push_back(std::move(f));
        }
        if (cfg.use_affinity && ni > 0 && nj > 0) {
            const int ds = net->config.shape_dim;
            Mat x(measurement::affinity_input_dim(ds), ni * nj);
            for (Eigen::Index i = 0; i < ni; ++i) {
                for (Eigen::Index j = 0; j < nj; ++j) {
                    x.col(i * nj + j) = measurement::affinity_input(obj_feat[static_cast<std::size_t>(i)],
                                                                    meas_feat[static_cast<std::size_t>(j)]);
                }
            }
            const Mat y = nn::mlp_forward(net->affinity, x);
            for (Eigen::Index i = 0; i < ni; ++i) {
                for (Eigen::Index j = 0; j < nj; ++j) {
                    factors.affinity(i, j) = measurement::affinity_from_logit(y(0, i * nj + j), net->config.affinity_floor);
                }
            }
        }
        if (cfg.use_fpr && nj > 0) {
            const int ds = net->config.shape_dim;
            Mat x(measurement::fpr_input_dim(ds), nj);
            for (Eigen::Index j = 0; j < nj; ++j) x.col(j) = measurement::fpr_input(meas_feat[static_cast<std::size_t>(j)]);
            const Mat y = nn::mlp_forward(net->fpr, x);
            for (Eigen::Index j = 0; j < nj; ++j) factors.fpr[j] = nn::sigmoid(y(0, j));
        }
    }
    if (factors.affinity.size() > 0) diag.affinity_mean = factors.affinity.mean();
    if (factors.fpr.size() > 0) diag.fpr_mean = factors.fpr.mean();

    // Association.
    const measurement::GaussianKernel kernel(cfg.sigma_r);
    std::vector<Mat> lik;
    std::vector<measurement::LegacyInput> inputs;
    for (const auto& po : legacy) {
        lik.push_back(measurement::particle_likelihoods(po.particles, meas, kernel));
        inputs.push_back({&po.particles, po.existence});
    }
    const auto problem = measurement::build_association_problem(inputs, meas, factors, model, &lik);
    const auto marg = association::bp_marginals(problem, cfg.bp_max_iter, cfg.bp_tol);
    diag.bp_iterations = marg.iterations;
    diag.bp_converged = marg.converged;

    // Legacy update.
    std::vector<PoState> next;
    for (Eigen::Index i = 0; i < ni; ++i) {
        PoState po = std::move(legacy[static_cast<std::size_t>(i)]);
        const Vec krow = marg.kappa_msg.row(i).transpose();
        auto up = measurement::update_legacy(po.particles, po.existence, krow, lik[static_cast<std::size_t>(i)],
                                             factors, i, model, rng);
        po.particles = std::move(up.particles);
        po.gaussian = std::move(up.gaussian);
        po.existence = up.existence;
        if (nj > 0) {
            Eigen::Index best = 0;
            const double pbest = marg.kappa.row(i).tail(nj).maxCoeff(&best);
            if (pbest > 0.5) {
                const Measurement& m = meas[static_cast<std::size_t>(best)];
                po.score = cfg.score_keep * po.score + (1.0 - cfg.score_keep) * m.score;
                po.last_box = m.box;
            }
        }
        next.push_back(std::move(po));
    }

    // New POs.
    for (Eigen::Index j = 0; j < nj; ++j) {
        const Measurement& m = meas[static_cast<std::size_t>(j)];
        auto up = measurement::init_new_po(m, marg.iota_msg(j, 0), model, factors.fpr[j], cfg.particle_count, rng);
        PoState po;
        po.id = state.next_id++;
        po.particles = std::move(up.particles);
        po.gaussian = std::move(up.gaussian);
        po.existence = up.existence;
        po.hidden = neural_motion ? Vec::Zero(net->config.hidden_dim) : Vec();
        po.birth_time = state.k;
        po.last_box = m.box;
        po.class_id = m.class_id;
        po.score = m.score;
        po.origin = m.z.head<2>() - cfg.dt * m.z.segment<2>(2);
        next.push_back(std::move(po));
    }
    diag.num_new = static_cast<int>(nj);

    if (cfg.record_training) {
        TrainingRecord rec;
        rec.priors = std::move(priors);
        rec.neighbors = std::move(nbr_sets);
        rec.predicted_means = std::move(predicted_means);
        for (Eigen::Index i = 0; i < ni; ++i) {
            const auto& po = next[static_cast<std::size_t>(i)];
            rec.posterior_means.push_back(po.particles.particles * po.particles.weights);
            rec.posterior_existence.push_back(po.existence);
        }
        rec.objects = std::move(obj_feat);
        rec.measurements = std::move(meas_feat);
        rec.object_roi = std::move(obj_shapes.roi);
        rec.meas_roi = std::move(meas_shapes.roi);
        rec.object_oor = std::move(obj_shapes.oor);
        rec.meas_oor = std::move(meas_shapes.oor);
        rec.factors = factors;
        diag.training = std::move(rec);
    }

    result.estimates = declare_and_estimate(next, cfg);
    const std::size_t before = next.size();
    state.pos = prune(std::move(next), cfg);
    diag.num_pruned = static_cast<int>(before - state.pos.size());
    ++state.k;
    return result;
}

TrackerConfig config_for(const sim::ScenarioConfig& scenario) {
    TrackerConfig cfg;
    cfg.dt = scenario.dt;
    cfg.q = motion::cv_process_noise(scenario.dt, 1.5);
    cfg.p_d = std::clamp(scenario.p_d, 1e-3, 1.0);
    Vec d(4);
    d << std::max(scenario.sigma_p * scenario.sigma_p, 1e-4), std::max(scenario.sigma_p * scenario.sigma_p, 1e-4),
        std::max(scenario.sigma_v * scenario.sigma_v, 1e-4), std::max(scenario.sigma_v * scenario.sigma_v, 1e-4);
    cfg.sigma_r = d.asDiagonal();
    cfg.mu_fp = std::max(scenario.mu_fp, 1e-3);
    cfg.mu_n = std::max(scenario.birth_rate, 0.1);
    cfg.region = scenario.region;
    return cfg;
}

SceneRun run_scene(const sim::Scene& scene, const TrackerConfig& cfg, const NetworkParams* net, std::uint64_t seed) {
    validate(cfg);
    SceneRun run;
    TrackerState state;
    Rng rng(seed);
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& frame : scene.frames) {
        StepResult r = step(state, frame.meas, &frame.map, cfg, net, rng);
        run.tracks.push_back(std::move(r.estimates));
        run.diagnostics.push_back(std::move(r.diag));
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

}  // namespace bpmot::tracker
