#include "bpmot/simulator.hpp"

#include "bpmot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bpmot::sim {
namespace {

struct SimObject {
    int id;
    int class_id;
    Eigen::Vector2d p;
    Eigen::Vector2d v;
    Eigen::Vector2d v_pref;
    Eigen::Vector2d a_man;
    measurement::Box box;
};

Vec random_descriptor(int dim, double sigma, Rng& rng) {
    Vec d(dim);
    for (int i = 0; i < dim; ++i) d[i] = sigma * rng.normal();
    return d;
}

bool far_from_others(const std::vector<SimObject>& objs, const Eigen::Vector2d& p, double radius) {
    return std::all_of(objs.begin(), objs.end(), [&](const SimObject& o) { return (o.p - p).norm() >= radius; });
}

SimObject spawn(const ScenarioConfig& cfg, const std::vector<SimObject>& objs, int id, Rng& rng) {
    SimObject o;
    o.id = id;
    o.class_id = static_cast<int>(rng.uniform() * static_cast<double>(cfg.classes.size()));
    o.class_id = std::min(o.class_id, static_cast<int>(cfg.classes.size()) - 1);
    const auto& cls = cfg.classes[static_cast<std::size_t>(o.class_id)];
    const auto& r = cfg.region;
    const double margin = 2.0;
    for (int attempt = 0; attempt < 20; ++attempt) {
        o.p = {rng.uniform(r.xmin + margin, r.xmax - margin), rng.uniform(r.ymin + margin, r.ymax - margin)};
        if (!cfg.interactions || far_from_others(objs, o.p, cfg.repulsion_radius)) break;
    }
    const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double speed = rng.uniform(cls.speed_min, cls.speed_max);
    o.v = {speed * std::cos(heading), speed * std::sin(heading)};
    o.v_pref = o.v;
    o.a_man = cfg.maneuver_sigma * Eigen::Vector2d(rng.normal(), rng.normal());
    o.box = {cls.length, cls.width, heading};
    return o;
}

void propagate(std::vector<SimObject>& objs, const ScenarioConfig& cfg, Rng& rng) {
    const double h = cfg.dt / cfg.substeps;
    const double decay = std::exp(-h / cfg.maneuver_tau);
    const double drive = cfg.maneuver_sigma * std::sqrt(1.0 - decay * decay);
    for (int s = 0; s < cfg.substeps; ++s) {
        std::vector<Eigen::Vector2d> acc(objs.size());
        for (std::size_t i = 0; i < objs.size(); ++i) {
            auto& o = objs[i];
            Eigen::Vector2d a = o.a_man + (o.v_pref - o.v) / cfg.relax_tau;
            if (cfg.interactions) {
                for (std::size_t j = 0; j < objs.size(); ++j) {
                    if (j == i) continue;
                    const Eigen::Vector2d d = o.p - objs[j].p;
                    const double dist = std::max(d.norm(), 1e-3);
                    if (dist < cfg.repulsion_radius) {
                        const double q = cfg.repulsion_radius / dist;
                        a += cfg.repulsion_strength * (q * q - 1.0) * d / dist;
                    }
                }
            }
            if (cfg.lane_attraction > 0.0) {
                const double lane = std::round(o.p.y() / cfg.lane_spacing) * cfg.lane_spacing;
                a.y() -= cfg.lane_attraction * (o.p.y() - lane);
            }
            acc[i] = a;
        }
        for (std::size_t i = 0; i < objs.size(); ++i) {
            auto& o = objs[i];
            o.v += h * acc[i];
            const double vmax = cfg.classes[static_cast<std::size_t>(o.class_id)].vmax();
            const double speed = o.v.norm();
            if (speed > vmax) o.v *= vmax / speed;
            o.p += h * o.v;
            if (cfg.maneuver_sigma > 0.0) {
                o.a_man = decay * o.a_man + drive * Eigen::Vector2d(rng.normal(), rng.normal());
            }
        }
    }
    for (auto& o : objs) {
        if (o.v.norm() > 0.2) o.box.yaw = std::atan2(o.v.y(), o.v.x());
    }
}

GtObject to_gt(const SimObject& o) {
    GtObject g;
    g.id = o.id;
    g.state = Vec(4);
    g.state << o.p.x(), o.p.y(), o.v.x(), o.v.y();
    g.box = o.box;
    g.class_id = o.class_id;
    return g;
}

Vec noisy_state(const Vec& x, const ScenarioConfig& cfg, Rng& rng) {
    Vec z = x;
    z[0] += cfg.sigma_p * rng.normal();
    z[1] += cfg.sigma_p * rng.normal();
    z[2] += cfg.sigma_v * rng.normal();
    z[3] += cfg.sigma_v * rng.normal();
    return z;
}

measurement::Box random_box(Rng& rng) {
    return {rng.uniform(0.5, 5.0), rng.uniform(0.5, 2.5), rng.uniform(-std::numbers::pi, std::numbers::pi)};
}

int random_class(const ScenarioConfig& cfg, Rng& rng) {
    const int n = static_cast<int>(cfg.classes.size());
    return std::min(static_cast<int>(rng.uniform() * n), n - 1);
}

}  // namespace

std::vector<ClassSpec> default_classes(int descriptor_dim) {
    std::vector<ClassSpec> c = {
        {"car", 4.5, 1.9, 4.0, 9.0, {}},
        {"pedestrian", 0.8, 0.7, 0.8, 1.8, {}},
        {"cyclist", 1.8, 0.7, 2.5, 5.0, {}},
    };
    for (std::size_t i = 0; i < c.size(); ++i) {
        Rng rng(7919 + i);
        c[i].descriptor = random_descriptor(descriptor_dim, 1.0, rng);
    }
    return c;
}

Mat ScenarioConfig::sigma_r() const {
    Vec d(4);
    d << sigma_p * sigma_p, sigma_p * sigma_p, sigma_v * sigma_v, sigma_v * sigma_v;
    return d.asDiagonal();
}

void validate(const ScenarioConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw Error(ErrorCode::ConfigInvalid, "scenario." + field + ": " + why);
    };
    if (!(c.dt > 0.0)) fail("dt", "must be > 0");
    if (c.frames < 0) fail("frames", "must be >= 0");
    if (!(c.region.xmax > c.region.xmin) || !(c.region.ymax > c.region.ymin)) fail("region", "degenerate");
    if (!(c.region.vmax > 0.0)) fail("region.vmax", "must be > 0");
    if (c.initial_objects < 0) fail("initial_objects", "must be >= 0");
    if (c.birth_rate < 0.0) fail("birth_rate", "must be >= 0");
    if (c.death_prob < 0.0 || c.death_prob > 1.0) fail("death_prob", "must be in [0, 1]");
    if (c.p_d < 0.0 || c.p_d > 1.0) fail("p_d", "must be in [0, 1]");
    if (c.mu_fp < 0.0) fail("mu_fp", "must be >= 0");
    if (c.sigma_p < 0.0) fail("sigma_p", "must be >= 0");
    if (c.sigma_v < 0.0) fail("sigma_v", "must be >= 0");
    if (c.maneuver_sigma < 0.0) fail("maneuver_sigma", "must be >= 0");
    if (!(c.maneuver_tau > 0.0)) fail("maneuver_tau", "must be > 0");
    if (!(c.relax_tau > 0.0)) fail("relax_tau", "must be > 0");
    if (c.interactions && !(c.repulsion_radius > 0.0)) fail("repulsion_radius", "must be > 0");
    if (c.repulsion_strength < 0.0) fail("repulsion_strength", "must be >= 0");
    if (c.lane_attraction < 0.0) fail("lane_attraction", "must be >= 0");
    if (!(c.lane_spacing > 0.0)) fail("lane_spacing", "must be > 0");
    if (c.substeps < 1) fail("substeps", "must be >= 1");
    if (c.grid_size < 2) fail("grid_size", "must be >= 2");
    if (c.descriptor_dim < 1) fail("descriptor_dim", "must be >= 1");
    if (c.descriptor_jitter < 0.0) fail("descriptor_jitter", "must be >= 0");
    if (c.background_sigma < 0.0) fail("background_sigma", "must be >= 0");
    if (!(c.true_score_a > 0.0 && c.true_score_b > 0.0)) fail("true_score", "beta parameters must be > 0");
    if (!(c.clutter_score_a > 0.0 && c.clutter_score_b > 0.0)) fail("clutter_score", "beta parameters must be > 0");
    if (c.class_confusion < 0.0 || c.class_confusion > 1.0) fail("class_confusion", "must be in [0, 1]");
    if (c.ghost_rate < 0.0) fail("ghost_rate", "must be >= 0");
    if (!(c.ghost_lifetime >= 1.0)) fail("ghost_lifetime", "must be >= 1");
    if (c.ghost_detect_prob < 0.0 || c.ghost_detect_prob > 1.0) fail("ghost_detect_prob", "must be in [0, 1]");
    if (c.classes.empty()) fail("classes", "must not be empty");
    for (const auto& cls : c.classes) {
        if (!(cls.length > 0.0 && cls.width > 0.0)) fail("classes." + cls.name, "box dims must be > 0");
        if (cls.speed_min < 0.0 || cls.speed_max < cls.speed_min) fail("classes." + cls.name, "speed range");
        if (cls.descriptor.size() != c.descriptor_dim) {
            fail("classes." + cls.name, "descriptor must have descriptor_dim entries");
        }
    }
}

std::vector<std::vector<GtObject>> generate_ground_truth(const ScenarioConfig& cfg, Rng& rng) {
    validate(cfg);
    std::vector<std::vector<GtObject>> out;
    std::vector<SimObject> objs;
    int next_id = 0;
    for (int k = 0; k < cfg.frames; ++k) {
        if (k == 0) {
            for (int n = 0; n < cfg.initial_objects; ++n) objs.push_back(spawn(cfg, objs, next_id++, rng));
        } else {
            propagate(objs, cfg, rng);
            std::vector<SimObject> kept;
            for (auto& o : objs) {
                const bool dies = cfg.death_prob > 0.0 && rng.bernoulli(cfg.death_prob);
                if (!dies && cfg.region.contains_position(o.p.x(), o.p.y())) kept.push_back(o);
            }
            objs = std::move(kept);
            const int births = rng.poisson(cfg.birth_rate);
            for (int n = 0; n < births; ++n) objs.push_back(spawn(cfg, objs, next_id++, rng));
        }
        std::vector<GtObject> frame;
        for (const auto& o : objs) frame.push_back(to_gt(o));
        out.push_back(std::move(frame));
    }
    return out;
}

std::vector<std::vector<GtObject>> rollout(const ScenarioConfig& cfg, const std::vector<GtObject>& initial,
                                           Rng& rng) {
    validate(cfg);
    std::vector<SimObject> objs;
    for (const auto& g : initial) {
        SimObject o;
        o.id = g.id;
        o.class_id = g.class_id;
        o.p = g.state.head<2>();
        o.v = g.state.tail<2>();
        o.v_pref = o.v;
        o.a_man = Eigen::Vector2d::Zero();
        o.box = g.box;
        objs.push_back(o);
    }
    std::vector<std::vector<GtObject>> out;
    for (int k = 0; k < cfg.frames; ++k) {
        if (k > 0) propagate(objs, cfg, rng);
        std::vector<GtObject> frame;
        for (const auto& o : objs) frame.push_back(to_gt(o));
        out.push_back(std::move(frame));
    }
    return out;
}

Detections detect(const std::vector<GtObject>& gt, const ScenarioConfig& cfg, DetectorState& state, Rng& rng) {
    Detections det;
    auto push = [&](measurement::Measurement m, int src, Vec desc) {
        det.meas.push_back(std::move(m));
        det.source.push_back(src);
        det.clutter_descriptors.push_back(std::move(desc));
    };
    for (const auto& g : gt) {
        if (!rng.bernoulli(cfg.p_d)) continue;
        measurement::Measurement m;
        m.z = noisy_state(g.state, cfg, rng);
        m.box = {g.box.length * (1.0 + 0.05 * rng.normal()), g.box.width * (1.0 + 0.05 * rng.normal()),
                 g.box.yaw + 0.05 * rng.normal()};
        m.box.length = std::max(m.box.length, 0.1);
        m.box.width = std::max(m.box.width, 0.1);
        m.score = rng.beta(cfg.true_score_a, cfg.true_score_b);
        m.class_id = rng.bernoulli(cfg.class_confusion) ? random_class(cfg, rng) : g.class_id;
        push(std::move(m), g.id, Vec());
    }

    // Persistent false sources: survive, move, spawn, then detect.
    std::vector<Ghost> alive;
    for (auto& gh : state.ghosts) {
        if (rng.bernoulli(1.0 / cfg.ghost_lifetime)) continue;
        gh.state.head<2>() += cfg.dt * gh.state.tail<2>();
        if (cfg.region.contains_position(gh.state[0], gh.state[1])) alive.push_back(gh);
    }
    const int new_ghosts = rng.poisson(cfg.ghost_rate);
    for (int n = 0; n < new_ghosts; ++n) {
        Ghost gh;
        gh.state = Vec(4);
        gh.state << rng.uniform(cfg.region.xmin, cfg.region.xmax), rng.uniform(cfg.region.ymin, cfg.region.ymax),
            0.5 * rng.normal(), 0.5 * rng.normal();
        gh.box = random_box(rng);
        gh.descriptor = random_descriptor(cfg.descriptor_dim, cfg.clutter_descriptor_sigma, rng);
        alive.push_back(std::move(gh));
    }
    state.ghosts = std::move(alive);
    for (const auto& gh : state.ghosts) {
        if (!rng.bernoulli(cfg.ghost_detect_prob)) continue;
        measurement::Measurement m;
        m.z = noisy_state(gh.state, cfg, rng);
        m.box = gh.box;
        m.score = rng.beta(cfg.clutter_score_a, cfg.clutter_score_b);
        m.class_id = random_class(cfg, rng);
        push(std::move(m), kGhost, Vec());
    }

    const int n_clutter = rng.poisson(cfg.mu_fp);
    for (int n = 0; n < n_clutter; ++n) {
        measurement::Measurement m;
        m.z = Vec(4);
        m.z << rng.uniform(cfg.region.xmin, cfg.region.xmax), rng.uniform(cfg.region.ymin, cfg.region.ymax),
            rng.uniform(-cfg.region.vmax, cfg.region.vmax), rng.uniform(-cfg.region.vmax, cfg.region.vmax);
        m.box = random_box(rng);
        m.score = rng.beta(cfg.clutter_score_a, cfg.clutter_score_b);
        m.class_id = random_class(cfg, rng);
        push(std::move(m), kClutter, random_descriptor(cfg.descriptor_dim, cfg.clutter_descriptor_sigma, rng));
    }

    // Shuffle so that measurement order carries no source information.
    const std::size_t n = det.meas.size();
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
        std::swap(det.meas[i - 1], det.meas[std::min(j, i - 1)]);
        std::swap(det.source[i - 1], det.source[std::min(j, i - 1)]);
        std::swap(det.clutter_descriptors[i - 1], det.clutter_descriptors[std::min(j, i - 1)]);
    }
    return det;
}

Vec track_jitter(const ScenarioConfig& cfg, std::uint64_t scene_seed, int id) {
    Rng rng = Rng(scene_seed).split(0x5A17u + static_cast<std::uint64_t>(id));
    return random_descriptor(cfg.descriptor_dim, cfg.descriptor_jitter, rng);
}

void stamp(FeatureMap& map, const measurement::Region& region, double x, double y, const measurement::Box& box,
           const Vec& descriptor) {
    const double cs = (region.xmax - region.xmin) / map.cols;
    const double csy = (region.ymax - region.ymin) / map.rows;
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double reach = 0.5 * std::hypot(box.length, box.width) + std::max(cs, csy);
    const int c0 = std::max(0, static_cast<int>(std::floor((x - reach - region.xmin) / cs)));
    const int c1 = std::min(map.cols - 1, static_cast<int>(std::floor((x + reach - region.xmin) / cs)));
    const int r0 = std::max(0, static_cast<int>(std::floor((y - reach - region.ymin) / csy)));
    const int r1 = std::min(map.rows - 1, static_cast<int>(std::floor((y + reach - region.ymin) / csy)));
    const int nc = static_cast<int>(std::floor((x - region.xmin) / cs));
    const int nr = static_cast<int>(std::floor((y - region.ymin) / csy));
    for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
            const double dx = region.xmin + (col + 0.5) * cs - x;
            const double dy = region.ymin + (r + 0.5) * csy - y;
            const double u = c * dx + s * dy;
            const double v = -s * dx + c * dy;
            const bool covered = std::abs(u) <= 0.5 * (box.length + cs) && std::abs(v) <= 0.5 * (box.width + csy);
            if (!covered && !(r == nr && col == nc)) continue;
            for (int d = 0; d < map.depth; ++d) map.at(r, col, d) += static_cast<float>(descriptor[d]);
        }
    }
}

FeatureMap render_feature_map(const std::vector<GtObject>& gt, const Detections& det, const DetectorState& state,
                              const ScenarioConfig& cfg, std::uint64_t scene_seed, Rng& rng) {
    FeatureMap map(cfg.grid_size, cfg.grid_size, cfg.descriptor_dim);
    // Uniform noise with standard deviation background_sigma.
    const double a = std::sqrt(3.0) * cfg.background_sigma;
    for (auto& v : map.data) v = static_cast<float>(rng.uniform(-a, a));
    for (const auto& g : gt) {
        const Vec desc = cfg.classes[static_cast<std::size_t>(g.class_id)].descriptor + track_jitter(cfg, scene_seed, g.id);
        stamp(map, cfg.region, g.state[0], g.state[1], g.box, desc);
    }
    for (const auto& gh : state.ghosts) stamp(map, cfg.region, gh.state[0], gh.state[1], gh.box, gh.descriptor);
    for (std::size_t j = 0; j < det.meas.size(); ++j) {
        if (det.source[j] != kClutter) continue;
        const auto& m = det.meas[j];
        stamp(map, cfg.region, m.z[0], m.z[1], m.box, det.clutter_descriptors[j]);
    }
    return map;
}

double bilinear(const FeatureMap& map, const measurement::Region& region, double x, double y, int d) {
    const double cs = (region.xmax - region.xmin) / map.cols;
    const double csy = (region.ymax - region.ymin) / map.rows;
    double u = std::clamp((x - region.xmin) / cs - 0.5, 0.0, static_cast<double>(map.cols - 1));
    double v = std::clamp((y - region.ymin) / csy - 0.5, 0.0, static_cast<double>(map.rows - 1));
    const int c0 = std::min(static_cast<int>(std::floor(u)), map.cols - 2);
    const int r0 = std::min(static_cast<int>(std::floor(v)), map.rows - 2);
    const double fu = u - c0;
    const double fv = v - r0;
    const double v00 = map.at(r0, c0, d);
    const double v01 = map.at(r0, c0 + 1, d);
    const double v10 = map.at(r0 + 1, c0, d);
    const double v11 = map.at(r0 + 1, c0 + 1, d);
    return (1.0 - fv) * ((1.0 - fu) * v00 + fu * v01) + fv * ((1.0 - fu) * v10 + fu * v11);
}

RoiResult roi_sample(const FeatureMap& map, const measurement::Region& region, double x, double y,
                     const measurement::Box& box) {
    RoiResult out;
    out.samples = Vec::Zero(5 * map.depth);
    if (!region.contains_position(x, y)) {
        out.out_of_region = true;
        return out;
    }
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double hl = 0.5 * box.length;
    const double hw = 0.5 * box.width;
    const double offsets[5][2] = {{0.0, 0.0}, {hl, hw}, {hl, -hw}, {-hl, -hw}, {-hl, hw}};
    for (int k = 0; k < 5; ++k) {
        const double px = x + c * offsets[k][0] - s * offsets[k][1];
        const double py = y + s * offsets[k][0] + c * offsets[k][1];
        for (int d = 0; d < map.depth; ++d) out.samples[k * map.depth + d] = bilinear(map, region, px, py, d);
    }
    return out;
}

Vec roi_extract(const FeatureMap& map, const measurement::Region& region, double x, double y,
                const measurement::Box& box, const nn::Mlp& head, bool* out_of_region) {
    const RoiResult roi = roi_sample(map, region, x, y, box);
    if (out_of_region) *out_of_region = roi.out_of_region;
    if (roi.out_of_region) return Vec::Zero(head.out_dim());
    return nn::mlp_forward(head, roi.samples);
}

Scene simulate_scene(const ScenarioConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Scene scene;
    scene.config = cfg;
    scene.seed = seed;
    const Rng root(seed);
    Rng gt_rng = root.split(1);
    Rng det_rng = root.split(2);
    Rng map_rng = root.split(3);
    const auto gt = generate_ground_truth(cfg, gt_rng);
    DetectorState state;
    for (int k = 0; k < cfg.frames; ++k) {
        Frame f;
        f.k = k;
        f.gt = gt[static_cast<std::size_t>(k)];
        Detections det = detect(f.gt, cfg, state, det_rng);
        f.map = render_feature_map(f.gt, det, state, cfg, seed, map_rng);
        f.meas = std::move(det.meas);
        f.meas_source = std::move(det.source);
        scene.frames.push_back(std::move(f));
    }
    return scene;
}

}  // namespace bpmot::sim
