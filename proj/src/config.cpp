#include "bpmot/config.hpp"

#include "bpmot/errors.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <optional>

namespace bpmot::config {
namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
    throw Error(ErrorCode::ConfigInvalid, field + ": " + why);
}

/// Key-by-key reader that rejects keys it has no handler for.
class Section {
public:
    Section(std::string name, const Json& j) : name_(std::move(name)), j_(j) {
        if (!j_.is_object()) invalid(name_, "must be an object");
    }

    template <class T>
    Section& field(const std::string& key, T& dst) {
        return custom(key, [&dst, this, key](const Json& v) {
            try {
                dst = v.get<T>();
            } catch (const Json::exception&) {
                invalid(name_ + "." + key, "wrong type");
            }
        });
    }

    Section& custom(const std::string& key, std::function<void(const Json&)> fn) {
        handlers_[key] = std::move(fn);
        return *this;
    }

    void apply() {
        for (const auto& [key, value] : j_.items()) {
            const auto it = handlers_.find(key);
            if (it == handlers_.end()) invalid(name_ + "." + key, "unknown key");
            it->second(value);
        }
    }

    [[nodiscard]] const std::string& name() const { return name_; }

private:
    std::string name_;
    const Json& j_;
    std::map<std::string, std::function<void(const Json&)>> handlers_;
};

void apply_region(measurement::Region& r, const Json& j, const std::string& name) {
    Section(name, j)
        .field("xmin", r.xmin)
        .field("xmax", r.xmax)
        .field("ymin", r.ymin)
        .field("ymax", r.ymax)
        .field("vmax", r.vmax)
        .apply();
}

Json region_json(const measurement::Region& r) {
    return Json{{"xmin", r.xmin}, {"xmax", r.xmax}, {"ymin", r.ymin}, {"ymax", r.ymax}, {"vmax", r.vmax}};
}

Vec vec_from(const Json& v, const std::string& field) {
    if (!v.is_array()) invalid(field, "must be an array");
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) invalid(field, "must contain numbers");
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
}

Mat matrix_from(const Json& v, const std::string& field) {
    if (!v.is_array() || v.empty()) invalid(field, "must be a diagonal array or a square matrix");
    if (v[0].is_number()) {
        return vec_from(v, field).asDiagonal();
    }
    const auto n = static_cast<Eigen::Index>(v.size());
    Mat m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Vec row = vec_from(v[static_cast<std::size_t>(r)], field);
        if (row.size() != n) invalid(field, "must be square");
        m.row(r) = row.transpose();
    }
    return m;
}

sim::ClassSpec class_from(const Json& j, const std::string& name) {
    sim::ClassSpec c;
    Section(name, j)
        .field("name", c.name)
        .field("length", c.length)
        .field("width", c.width)
        .field("speed_min", c.speed_min)
        .field("speed_max", c.speed_max)
        .custom("descriptor", [&](const Json& v) { c.descriptor = vec_from(v, name + ".descriptor"); })
        .apply();
    return c;
}

}  // namespace

void apply_scenario(sim::ScenarioConfig& c, const Json& j) {
    const int old_dim = c.descriptor_dim;
    bool classes_given = false;
    Section("scenario", j)
        .custom("region", [&](const Json& v) { apply_region(c.region, v, "scenario.region"); })
        .field("dt", c.dt)
        .field("frames", c.frames)
        .field("initial_objects", c.initial_objects)
        .field("birth_rate", c.birth_rate)
        .field("death_prob", c.death_prob)
        .field("p_d", c.p_d)
        .field("mu_fp", c.mu_fp)
        .field("sigma_p", c.sigma_p)
        .field("sigma_v", c.sigma_v)
        .field("maneuver_sigma", c.maneuver_sigma)
        .field("maneuver_tau", c.maneuver_tau)
        .field("relax_tau", c.relax_tau)
        .field("interactions", c.interactions)
        .field("repulsion_radius", c.repulsion_radius)
        .field("repulsion_strength", c.repulsion_strength)
        .field("lane_attraction", c.lane_attraction)
        .field("lane_spacing", c.lane_spacing)
        .field("substeps", c.substeps)
        .field("grid_size", c.grid_size)
        .field("descriptor_dim", c.descriptor_dim)
        .field("descriptor_jitter", c.descriptor_jitter)
        .field("background_sigma", c.background_sigma)
        .field("clutter_descriptor_sigma", c.clutter_descriptor_sigma)
        .field("true_score_a", c.true_score_a)
        .field("true_score_b", c.true_score_b)
        .field("clutter_score_a", c.clutter_score_a)
        .field("clutter_score_b", c.clutter_score_b)
        .field("class_confusion", c.class_confusion)
        .field("ghost_rate", c.ghost_rate)
        .field("ghost_lifetime", c.ghost_lifetime)
        .field("ghost_detect_prob", c.ghost_detect_prob)
        .custom("classes",
                [&](const Json& v) {
                    if (!v.is_array()) invalid("scenario.classes", "must be an array");
                    c.classes.clear();
                    for (std::size_t i = 0; i < v.size(); ++i) {
                        c.classes.push_back(class_from(v[i], "scenario.classes[" + std::to_string(i) + "]"));
                    }
                    classes_given = true;
                })
        .apply();
    if (!classes_given && c.descriptor_dim != old_dim && c.descriptor_dim > 0) {
        const auto fresh = sim::default_classes(c.descriptor_dim);
        for (std::size_t i = 0; i < c.classes.size(); ++i) {
            c.classes[i].descriptor = fresh[i % fresh.size()].descriptor;
        }
    }
}

Json scenario_to_json(const sim::ScenarioConfig& c) {
    Json classes = Json::array();
    for (const auto& k : c.classes) {
        classes.push_back({{"name", k.name},
                           {"length", k.length},
                           {"width", k.width},
                           {"speed_min", k.speed_min},
                           {"speed_max", k.speed_max},
                           {"descriptor", std::vector<double>(k.descriptor.data(), k.descriptor.data() + k.descriptor.size())}});
    }
    return Json{{"region", region_json(c.region)},
                {"dt", c.dt},
                {"frames", c.frames},
                {"initial_objects", c.initial_objects},
                {"birth_rate", c.birth_rate},
                {"death_prob", c.death_prob},
                {"p_d", c.p_d},
                {"mu_fp", c.mu_fp},
                {"sigma_p", c.sigma_p},
                {"sigma_v", c.sigma_v},
                {"maneuver_sigma", c.maneuver_sigma},
                {"maneuver_tau", c.maneuver_tau},
                {"relax_tau", c.relax_tau},
                {"interactions", c.interactions},
                {"repulsion_radius", c.repulsion_radius},
                {"repulsion_strength", c.repulsion_strength},
                {"lane_attraction", c.lane_attraction},
                {"lane_spacing", c.lane_spacing},
                {"substeps", c.substeps},
                {"grid_size", c.grid_size},
                {"descriptor_dim", c.descriptor_dim},
                {"descriptor_jitter", c.descriptor_jitter},
                {"background_sigma", c.background_sigma},
                {"clutter_descriptor_sigma", c.clutter_descriptor_sigma},
                {"true_score_a", c.true_score_a},
                {"true_score_b", c.true_score_b},
                {"clutter_score_a", c.clutter_score_a},
                {"clutter_score_b", c.clutter_score_b},
                {"class_confusion", c.class_confusion},
                {"ghost_rate", c.ghost_rate},
                {"ghost_lifetime", c.ghost_lifetime},
                {"ghost_detect_prob", c.ghost_detect_prob},
                {"classes", classes}};
}

sim::ScenarioConfig scenario_from_json(const Json& j) {
    sim::ScenarioConfig c;
    apply_scenario(c, j);
    sim::validate(c);
    return c;
}

void apply_tracker(tracker::TrackerConfig& c, const Json& j) {
    std::optional<double> sigma_a;
    bool q_given = false;
    Section("tracker", j)
        .field("p_s", c.p_s)
        .field("p_d", c.p_d)
        .field("t_dec", c.t_dec)
        .field("t_pru", c.t_pru)
        .field("max_neighbors", c.max_neighbors)
        .field("neighbor_existence", c.neighbor_existence)
        .field("particle_count", c.particle_count)
        .field("dt", c.dt)
        .custom("sigma_r", [&](const Json& v) { c.sigma_r = matrix_from(v, "tracker.sigma_r"); })
        .custom("q", [&](const Json& v) {
            c.q = matrix_from(v, "tracker.q");
            q_given = true;
        })
        .custom("sigma_a", [&](const Json& v) {
            if (!v.is_number()) invalid("tracker.sigma_a", "wrong type");
            sigma_a = v.get<double>();
        })
        .field("mu_fp", c.mu_fp)
        .field("mu_n", c.mu_n)
        .custom("region", [&](const Json& v) { apply_region(c.region, v, "tracker.region"); })
        .custom("ut", [&](const Json& v) {
            Section("tracker.ut", v).field("alpha", c.ut.alpha).field("beta", c.ut.beta).field("kappa", c.ut.kappa).apply();
        })
        .custom("mode", [&](const Json& v) {
            if (!v.is_string()) invalid("tracker.mode", "wrong type");
            c.mode = tracker::mode_from_name(v.get<std::string>());
        })
        .custom("strategy", [&](const Json& v) {
            if (!v.is_string()) invalid("tracker.strategy", "wrong type");
            try {
                c.strategy = motion::strategy_from_name(v.get<std::string>());
            } catch (const Error&) {
                invalid("tracker.strategy", "expected mean-only|object-sp|joint-sp");
            }
        })
        .field("use_affinity", c.use_affinity)
        .field("use_fpr", c.use_fpr)
        .field("neutral_factors", c.neutral_factors)
        .field("bp_max_iter", c.bp_max_iter)
        .field("bp_tol", c.bp_tol)
        .field("score_keep", c.score_keep)
        .apply();
    if (sigma_a) {
        if (q_given) invalid("tracker.sigma_a", "give either q or sigma_a");
        if (!(*sigma_a >= 0.0)) invalid("tracker.sigma_a", "must be >= 0");
        c.q = motion::cv_process_noise(c.dt, *sigma_a);
    }
}

void apply_train(train::TrainConfig& c, const Json& j) {
    Section("train", j)
        .field("w_fpr", c.w_fpr)
        .field("w_meas", c.w_meas)
        .field("lr_joint", c.lr_joint)
        .field("batch_joint", c.batch_joint)
        .field("lr_pre", c.lr_pre)
        .field("batch_pre", c.batch_pre)
        .custom("augment",
                [&](const Json& v) {
                    Section("train.augment", v)
                        .field("noise_pos", c.augment.noise_pos)
                        .field("noise_vel", c.augment.noise_vel)
                        .field("bias_pos", c.augment.bias_pos)
                        .field("bias_vel", c.augment.bias_vel)
                        .field("drop_prob", c.augment.drop_prob)
                        .apply();
                })
        .field("epochs_pre", c.epochs_pre)
        .field("epochs_joint", c.epochs_joint)
        .field("val_fraction", c.val_fraction)
        .field("gate", c.gate)
        .field("particle_count", c.particle_count)
        .custom("strategy", [&](const Json& v) {
            if (!v.is_string()) invalid("train.strategy", "wrong type");
            try {
                c.strategy = motion::strategy_from_name(v.get<std::string>());
            } catch (const Error&) {
                invalid("train.strategy", "expected mean-only|object-sp|joint-sp");
            }
        })
        .apply();
}

void apply_network(NetworkConfig& c, const Json& j) {
    Section("network", j)
        .field("hidden_dim", c.hidden_dim)
        .field("max_neighbors", c.max_neighbors)
        .field("descriptor_dim", c.descriptor_dim)
        .field("shape_dim", c.shape_dim)
        .field("factor_hidden", c.factor_hidden)
        .custom("frame", [&](const Json& v) {
            const std::string s = v.is_string() ? v.get<std::string>() : "";
            if (s == "local") {
                c.frame = motion::MotionFrame::Local;
            } else if (s == "absolute") {
                c.frame = motion::MotionFrame::Absolute;
            } else {
                invalid("network.frame", "expected local|absolute");
            }
        })
        .field("dt", c.dt)
        .field("pos_scale", c.pos_scale)
        .field("vel_scale", c.vel_scale)
        .field("nbr_scale", c.nbr_scale)
        .field("affinity_floor", c.affinity_floor)
        .apply();
    if (c.hidden_dim < 1) invalid("network.hidden_dim", "must be >= 1");
    if (c.max_neighbors < 0) invalid("network.max_neighbors", "must be >= 0");
    if (c.descriptor_dim < 1) invalid("network.descriptor_dim", "must be >= 1");
    if (c.shape_dim < 1) invalid("network.shape_dim", "must be >= 1");
    if (c.factor_hidden < 1) invalid("network.factor_hidden", "must be >= 1");
    if (!(c.dt > 0.0)) invalid("network.dt", "must be > 0");
    if (!(c.pos_scale > 0.0 && c.vel_scale > 0.0 && c.nbr_scale > 0.0)) invalid("network.scales", "must be > 0");
}

RunConfig parse_run_config(const Json& j) {
    RunConfig r;
    Section("config", j)
        .custom("scenario", [&](const Json& v) { apply_scenario(r.scenario, v); })
        .custom("tracker", [&](const Json& v) {
            tracker::TrackerConfig probe;
            apply_tracker(probe, v);
            r.tracker_overrides = v;
        })
        .custom("train", [&](const Json& v) { apply_train(r.train, v); })
        .custom("network", [&](const Json& v) { apply_network(r.network, v); })
        .custom("seed", [&](const Json& v) {
            if (!v.is_number_unsigned()) invalid("config.seed", "must be a non-negative integer");
            r.seed = v.get<std::uint64_t>();
        })
        .apply();
    sim::validate(r.scenario);
    train::validate(r.train);
    r.train.seed = r.seed;
    if (r.network.descriptor_dim != r.scenario.descriptor_dim && j.contains("scenario") &&
        !(j.contains("network") && j["network"].contains("descriptor_dim"))) {
        r.network.descriptor_dim = r.scenario.descriptor_dim;
    }
    return r;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open config " + path);
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, "config " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

tracker::TrackerConfig tracker_config(const RunConfig& run, const sim::ScenarioConfig& scenario) {
    tracker::TrackerConfig t = tracker::config_for(scenario);
    apply_tracker(t, run.tracker_overrides);
    tracker::validate(t);
    return t;
}

}  // namespace bpmot::config
