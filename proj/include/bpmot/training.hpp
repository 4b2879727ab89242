#pragma once

#include "bpmot/measurement.hpp"
#include "bpmot/model.hpp"
#include "bpmot/simulator.hpp"
#include "bpmot/tracker.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace bpmot::train {

struct MatchLabels {
    Mat af_gt;   // I x J
    Vec fpr_gt;  // J, 1 = true measurement
    std::vector<std::pair<int, int>> motion_pairs;  // (estimate index, gt index)
};

struct AugmentConfig {
    double noise_pos = 0.4;
    double noise_vel = 0.5;
    double bias_pos = 0.1;
    double bias_vel = 0.1;
    double drop_prob = 0.1;
};

struct TrainConfig {
    double w_fpr = 0.1;
    double w_meas = 1.0;
    double lr_joint = 1e-4;
    int batch_joint = 1;
    double lr_pre = 1e-3;
    int batch_pre = 32;
    AugmentConfig augment;
    int epochs_pre = 40;
    int epochs_joint = 5;
    double val_fraction = 0.2;
    double gate = 2.0;
    int particle_count = 1000;
    motion::PredictionStrategy strategy = motion::PredictionStrategy::ObjectSp;
    std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

/// Mean L1 distance over matched pairs; grad (optional) receives
/// d loss / d estimate for every estimate.
[[nodiscard]] double motion_loss(const std::vector<Vec>& estimates, const std::vector<Vec>& gt,
                                 const std::vector<std::pair<int, int>>& matches, std::vector<Vec>* grad = nullptr);

/// Class-balanced BCE on sigma(ln f) = f / (1 + f); dlogit receives
/// d loss / d ln f.
[[nodiscard]] double affinity_loss(const Mat& f_af, const Mat& af_gt, Mat* dlogit = nullptr);

/// Class-balanced BCE on f with weight w_fpr on false positives; dlogit
/// receives d loss / d logit where f = sigmoid(logit).
[[nodiscard]] double fpr_loss(const Vec& f_fpr, const Vec& fpr_gt, double w_fpr, Vec* dlogit = nullptr);

[[nodiscard]] double joint_loss(double motion, double meas, double w_meas);

/// legacy holds PO position estimates (at least 2 rows).
[[nodiscard]] MatchLabels label_frame(const std::vector<sim::GtObject>& gt,
                                      const std::vector<measurement::Measurement>& meas,
                                      const std::vector<Vec>& legacy, double gate);

/// Track with states removed by dropout; kept[i] is the original index of
/// states[i].
struct AugmentedTrack {
    std::vector<int> kept;
    std::vector<Vec> states;
};

[[nodiscard]] AugmentedTrack augment(const std::vector<Vec>& track, const AugmentConfig& cfg, Rng& rng);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_motion = 0.0;
    double val_affinity = 0.0;
    double val_fpr = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    NetworkParams params;
    std::vector<EpochLog> log;
    int best_epoch = 0;
};

/// Splits scenes by index: every scene whose position falls in the last
/// val_fraction share goes to validation.
void split_scenes(std::size_t n, double val_fraction, std::vector<std::size_t>& train, std::vector<std::size_t>& val);

/// One-step-ahead L1 of the motion network over every ground-truth track of
/// the scene, with BPTT through the whole scene; grads accumulate when
/// given. Returns (loss sum, term count).
std::pair<double, long> motion_sequence_loss(const NetworkParams& p, const sim::Scene& scene, const AugmentConfig& aug,
                                             Rng& rng, NetworkParams* grads);

[[nodiscard]] TrainResult pretrain_motion(const std::vector<sim::Scene>& scenes, const NetworkParams& init,
                                          const TrainConfig& cfg);

struct FrameLosses {
    double motion = 0.0;
    double affinity = 0.0;
    double fpr = 0.0;
    double joint = 0.0;
    long motion_pairs = 0;
    long frames = 0;  // set on aggregates
};

/// Losses of one tracker step in training mode, with gradients added into
/// grads when given.
FrameLosses frame_losses(const NetworkParams& p, const tracker::TrainingRecord& rec, const sim::Frame& frame,
                         const tracker::TrackerConfig& tcfg, const TrainConfig& cfg, NetworkParams* grads);

[[nodiscard]] tracker::TrackerConfig joint_tracker_config(const sim::ScenarioConfig& scenario, const TrainConfig& cfg);

/// Mean frame losses of a full tracker run without updates.
[[nodiscard]] FrameLosses evaluate_joint(const NetworkParams& p, const std::vector<sim::Scene>& scenes,
                                         const TrainConfig& cfg);

[[nodiscard]] TrainResult joint_train(const std::vector<sim::Scene>& scenes, const NetworkParams& init,
                                      const TrainConfig& cfg);

[[nodiscard]] std::string format_log(const std::vector<EpochLog>& log);

}  // namespace bpmot::train
