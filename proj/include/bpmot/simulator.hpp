#pragma once

#include "bpmot/measurement.hpp"
#include "bpmot/neural.hpp"
#include "bpmot/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bpmot::sim {

struct ClassSpec {
    std::string name;
    double length = 4.5;
    double width = 1.9;
    double speed_min = 3.0;
    double speed_max = 8.0;
    Vec descriptor;  // persistent shape descriptor, descriptor_dim entries

    /// Hard speed limit used by the dynamics.
    [[nodiscard]] double vmax() const { return 1.5 * speed_max; }
};

[[nodiscard]] std::vector<ClassSpec> default_classes(int descriptor_dim);

struct ScenarioConfig {
    measurement::Region region;
    double dt = 0.5;
    int frames = 40;
    int initial_objects = 8;
    double birth_rate = 0.3;
    double death_prob = 0.0;  // per-frame geometric lifetime
    double p_d = 0.9;
    double mu_fp = 2.0;
    double sigma_p = 0.4;
    double sigma_v = 0.5;
    double maneuver_sigma = 0.5;  // stationary std of the OU acceleration (m/s^2)
    double maneuver_tau = 2.0;
    double relax_tau = 4.0;  // relaxation towards the preferred velocity (s)
    bool interactions = true;
    double repulsion_radius = 8.0;
    double repulsion_strength = 30.0;  // a = k ((R/d)^2 - 1) inside R
    double lane_attraction = 0.0;
    double lane_spacing = 8.0;
    int substeps = 5;
    int grid_size = 64;
    int descriptor_dim = 8;
    double descriptor_jitter = 0.1;
    double background_sigma = 0.05;
    double clutter_descriptor_sigma = 1.0;
    double true_score_a = 8.0;
    double true_score_b = 2.0;
    double clutter_score_a = 2.0;
    double clutter_score_b = 8.0;
    double class_confusion = 0.1;
    double ghost_rate = 0.0;       // new persistent false sources per frame
    double ghost_lifetime = 6.0;   // mean frames
    double ghost_detect_prob = 0.8;
    std::vector<ClassSpec> classes = default_classes(8);

    [[nodiscard]] Mat sigma_r() const;
};

/// Throws ConfigInvalid naming the offending field.
void validate(const ScenarioConfig& cfg);

struct GtObject {
    int id = 0;
    Vec state;  // [px, py, vx, vy]
    measurement::Box box;
    int class_id = 0;
};

/// Row-major G x G x D grid of 32-bit values over the region; cell (r, c)
/// is centred at x = xmin + (c + 0.5) * cell, y = ymin + (r + 0.5) * cell.
struct FeatureMap {
    int rows = 0;
    int cols = 0;
    int depth = 0;
    std::vector<float> data;

    FeatureMap() = default;
    FeatureMap(int r, int c, int d) : rows(r), cols(c), depth(d), data(static_cast<std::size_t>(r * c * d), 0.0f) {}
    [[nodiscard]] float& at(int r, int c, int d) {
        return data[(static_cast<std::size_t>(r) * cols + c) * depth + d];
    }
    [[nodiscard]] float at(int r, int c, int d) const {
        return data[(static_cast<std::size_t>(r) * cols + c) * depth + d];
    }
};

/// Measurement source labels: >= 0 gt id, kClutter uniform clutter,
/// kGhost persistent false source.
inline constexpr int kClutter = -1;
inline constexpr int kGhost = -2;

struct Frame {
    int k = 0;
    std::vector<GtObject> gt;
    std::vector<measurement::Measurement> meas;
    std::vector<int> meas_source;
    FeatureMap map;
};

struct Scene {
    ScenarioConfig config;
    std::uint64_t seed = 0;
    std::vector<Frame> frames;
};

/// Ground truth only (frames without measurements or maps).
[[nodiscard]] std::vector<std::vector<GtObject>> generate_ground_truth(const ScenarioConfig& cfg, Rng& rng);

/// Propagates the given objects (preferred velocity = initial velocity) for
/// cfg.frames frames without births or deaths; frame 0 is the input.
[[nodiscard]] std::vector<std::vector<GtObject>> rollout(const ScenarioConfig& cfg,
                                                         const std::vector<GtObject>& initial, Rng& rng);

struct Ghost {
    Vec state;
    measurement::Box box;
    Vec descriptor;
};

/// Detector state carried across frames (persistent false sources).
struct DetectorState {
    std::vector<Ghost> ghosts;
};

struct Detections {
    std::vector<measurement::Measurement> meas;
    std::vector<int> source;
    std::vector<Vec> clutter_descriptors;  // per measurement, used for rendering
};

[[nodiscard]] Detections detect(const std::vector<GtObject>& gt, const ScenarioConfig& cfg, DetectorState& state,
                                Rng& rng);

/// Descriptor offset of a gt track (fixed per id).
[[nodiscard]] Vec track_jitter(const ScenarioConfig& cfg, std::uint64_t scene_seed, int id);

[[nodiscard]] FeatureMap render_feature_map(const std::vector<GtObject>& gt, const Detections& det,
                                            const DetectorState& state, const ScenarioConfig& cfg,
                                            std::uint64_t scene_seed, Rng& rng);

/// Adds descriptor into the cells covered by the oriented box.
void stamp(FeatureMap& map, const measurement::Region& region, double x, double y, const measurement::Box& box,
           const Vec& descriptor);

struct RoiResult {
    Vec samples;  // 5 * depth: centre then the four corners
    bool out_of_region = false;
};

[[nodiscard]] RoiResult roi_sample(const FeatureMap& map, const measurement::Region& region, double x, double y,
                                   const measurement::Box& box);
[[nodiscard]] double bilinear(const FeatureMap& map, const measurement::Region& region, double x, double y, int d);

/// ROI samples reduced by the shared feature head.
[[nodiscard]] Vec roi_extract(const FeatureMap& map, const measurement::Region& region, double x, double y,
                              const measurement::Box& box, const nn::Mlp& head, bool* out_of_region = nullptr);

[[nodiscard]] Scene simulate_scene(const ScenarioConfig& cfg, std::uint64_t seed);

}  // namespace bpmot::sim
