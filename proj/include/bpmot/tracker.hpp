#pragma once

#include "bpmot/measurement.hpp"
#include "bpmot/model.hpp"
#include "bpmot/motion.hpp"
#include "bpmot/simulator.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bpmot::tracker {

/// mb: CV prediction, unit factors. ne: neural prediction and factors.
/// ne-motion / ne-meas enable one of the two.
enum class Mode { Mb, Ne, NeMotion, NeMeas };

[[nodiscard]] const char* mode_name(Mode m);
[[nodiscard]] Mode mode_from_name(const std::string& s);
[[nodiscard]] bool uses_neural_motion(Mode m);
[[nodiscard]] bool uses_factors(Mode m);

struct PoState {
    int id = 0;
    ParticleSet particles;
    GaussianState gaussian;
    double existence = 0.0;
    Vec hidden;
    int birth_time = 0;
    measurement::Box last_box;
    int class_id = 0;
    double score = 0.0;
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();  // position one step earlier
};

struct TrackerConfig {
    double p_s = 0.999;
    double p_d = 0.9;
    double t_dec = 0.5;
    double t_pru = 1e-4;
    int max_neighbors = 10;
    double neighbor_existence = 0.5;
    int particle_count = 10000;
    double dt = 0.5;
    Mat sigma_r = Vec::Constant(4, 0.0).asDiagonal();
    Mat q;
    double mu_fp = 2.0;
    double mu_n = 0.5;
    measurement::Region region;
    UTParams ut;
    Mode mode = Mode::Mb;
    motion::PredictionStrategy strategy = motion::PredictionStrategy::ObjectSp;
    bool use_affinity = true;
    bool use_fpr = true;
    /// Forces every factor to exactly 1 regardless of mode.
    bool neutral_factors = false;
    int bp_max_iter = 200;
    double bp_tol = 1e-6;
    double score_keep = 0.7;
    bool record_training = false;

    TrackerConfig();
};

void validate(const TrackerConfig& cfg);
[[nodiscard]] measurement::MeasurementModel measurement_model(const TrackerConfig& cfg);

struct Estimate {
    int id = 0;
    Vec state;
    double existence = 0.0;
    double score = 0.0;
    measurement::Box box;
    int class_id = 0;

    [[nodiscard]] double confidence() const { return existence * score; }
};

/// Per-step quantities needed by joint training.
struct TrainingRecord {
    std::vector<motion::MotionPrior> priors;
    std::vector<motion::NeighborSet> neighbors;
    std::vector<Vec> predicted_means;
    std::vector<Vec> posterior_means;
    std::vector<double> posterior_existence;
    std::vector<measurement::ObjectFeatures> objects;
    std::vector<measurement::MeasurementFeatures> measurements;
    Mat object_roi;  // 5D x I
    Mat meas_roi;    // 5D x J
    std::vector<bool> object_oor;
    std::vector<bool> meas_oor;
    measurement::EnhancementFactors factors;
};

struct Diagnostics {
    int bp_iterations = 0;
    bool bp_converged = true;
    int num_legacy = 0;
    int num_new = 0;
    int num_pruned = 0;
    int num_dropped = 0;
    double affinity_mean = 1.0;
    double fpr_mean = 1.0;
    std::optional<TrainingRecord> training;
};

struct TrackerState {
    std::vector<PoState> pos;
    int next_id = 0;
    int k = 0;
};

struct StepResult {
    std::vector<Estimate> estimates;
    Diagnostics diag;
};

/// One full recursion; state is advanced in place. net may be null for
/// mode mb.
StepResult step(TrackerState& state, const std::vector<measurement::Measurement>& meas, const sim::FeatureMap* map,
                const TrackerConfig& cfg, const NetworkParams* net, Rng& rng);

[[nodiscard]] std::vector<Estimate> declare_and_estimate(const std::vector<PoState>& state, const TrackerConfig& cfg);
[[nodiscard]] std::vector<PoState> prune(std::vector<PoState> state, const TrackerConfig& cfg);

/// Legacy PO indices of the up-to-M nearest confident neighbors of PO i.
[[nodiscard]] std::vector<int> select_neighbors(const std::vector<PoState>& state, std::size_t i,
                                                const TrackerConfig& cfg);

using TrackHistory = std::vector<std::vector<Estimate>>;

struct SceneRun {
    TrackHistory tracks;
    std::vector<Diagnostics> diagnostics;
    double seconds = 0.0;
};

/// Tracker settings matched to a scenario (region, noise, clutter, p_d).
[[nodiscard]] TrackerConfig config_for(const sim::ScenarioConfig& scenario);

[[nodiscard]] SceneRun run_scene(const sim::Scene& scene, const TrackerConfig& cfg, const NetworkParams* net,
                                 std::uint64_t seed);

}  // namespace bpmot::tracker
