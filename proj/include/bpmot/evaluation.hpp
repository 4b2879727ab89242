#pragma once

#include "bpmot/motion.hpp"
#include "bpmot/simulator.hpp"
#include "bpmot/tracker.hpp"

#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace bpmot::eval {

using GtHistory = std::vector<std::vector<sim::GtObject>>;

struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // (row, col), ascending rows
    double cost = 0.0;
};

/// Minimum-cost assignment of min(rows, cols) pairs.
[[nodiscard]] Assignment hungarian(const Mat& cost);

/// Hungarian on distances; pairs farther than gate are dropped.
[[nodiscard]] std::vector<std::pair<int, int>> gated_match(const Mat& dist, double gate);

struct FrameScore {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    int id_switches = 0;
    int fragmentations = 0;
    std::vector<double> errors;
};

struct MotReport {
    bool defined = false;  // false when the scene has no ground truth
    double mota = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long ids = 0;
    long frag = 0;
    long gt_count = 0;
    double mean_error = 0.0;
    std::vector<FrameScore> frames;
};

inline constexpr double kDefaultGate = 2.0;

/// Per-frame gated matching with carry-over of previous matches.
/// Estimates with confidence below min_confidence are ignored.
[[nodiscard]] MotReport clear_mot(const tracker::TrackHistory& est, const GtHistory& gt, double gate = kDefaultGate,
                                  double min_confidence = -1.0);

struct SceneTracks {
    const tracker::TrackHistory* est = nullptr;
    const GtHistory* gt = nullptr;
};

struct RecallRow {
    double target = 0.0;
    bool achieved = false;
    double threshold = 0.0;
    double recall = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long ids = 0;
    double motar = 0.0;
};

struct AmotaReport {
    double amota = 0.0;
    std::vector<RecallRow> rows;
};

[[nodiscard]] std::vector<double> default_recall_grid();

/// Recall-normalized accuracy averaged over the recalls the tracker
/// reaches (0 when none). Confidence of an estimate is existence * score.
[[nodiscard]] AmotaReport amota_variant(const std::vector<SceneTracks>& scenes,
                                        const std::vector<double>& recalls = default_recall_grid(),
                                        double gate = kDefaultGate);
[[nodiscard]] AmotaReport amota_variant(const tracker::TrackHistory& est, const GtHistory& gt,
                                        const std::vector<double>& recalls = default_recall_grid(),
                                        double gate = kDefaultGate);

[[nodiscard]] GtHistory ground_truth(const sim::Scene& scene);

/// A ground-truth track with the detection Hungarian-matched to it in each
/// frame of its lifetime (empty when none).
struct NoisyTrack {
    int gt_id = 0;
    int class_id = 0;
    int first_frame = 0;
    std::vector<Vec> gt;
    std::vector<std::optional<Vec>> meas;
};

[[nodiscard]] std::vector<NoisyTrack> noisy_tracks(const sim::Scene& scene, double gate = kDefaultGate);

struct PredictionMse {
    std::map<int, double> per_class;
    std::map<int, long> count;
    double overall = 0.0;
    long total = 0;
};

/// One-step position prediction error; params == nullptr selects the CV
/// predictor. Missing inputs are replaced by the predictor's own output.
[[nodiscard]] PredictionMse prediction_mse(const std::vector<std::vector<NoisyTrack>>& scenes,
                                           const motion::MotionParams* params, double dt);

}  // namespace bpmot::eval
