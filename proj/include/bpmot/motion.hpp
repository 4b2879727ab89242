#pragma once

#include "bpmot/neural.hpp"
#include "bpmot/numerics.hpp"

#include <vector>

namespace bpmot::motion {

inline constexpr int kStateDim = 4;
inline constexpr double kNeighborEps = 1e-6;

/// Input/output convention of the motion network.
/// Absolute: Encoder A sees [x; h], Encoder B sees each raw neighbor state,
/// x_next = Decoder(h_next).
/// Local: positions enter relative to a frame origin (the object's previous
/// position), neighbors relative to the object, each scaled; the decoder
/// output is a scaled correction added to the CV transition of x.
enum class MotionFrame { Absolute, Local };

struct MotionParams {
    nn::Mlp encoder_a;
    nn::Mlp encoder_b;
    nn::GruParams gru;
    nn::Mlp decoder;
    int hidden_dim = 64;
    int state_dim = kStateDim;
    int max_neighbors = 10;
    MotionFrame frame = MotionFrame::Absolute;
    double dt = 0.5;
    double pos_scale = 1.0;
    double vel_scale = 1.0;
    double nbr_scale = 1.0;
};

/// Two-layer encoders, GRU and two-layer decoder (7 layers).
[[nodiscard]] MotionParams make_motion_params(int hidden_dim, int max_neighbors, MotionFrame frame, double dt,
                                              Rng& rng);

/// Local-frame parameters whose decoder outputs zero, so that
/// motion_forward reproduces the CV transition exactly.
[[nodiscard]] MotionParams linear_mode_params(int hidden_dim, int max_neighbors, double dt, Rng& rng);

[[nodiscard]] MotionParams zeros_like(const MotionParams& p);
void collect(MotionParams& p, const std::string& prefix, std::vector<nn::TensorRef>& out);

[[nodiscard]] Mat cv_transition(double dt);
/// Discrete white-noise-acceleration process noise.
[[nodiscard]] Mat cv_process_noise(double dt, double sigma_a);
[[nodiscard]] GaussianState cv_predict(const GaussianState& g, double dt, const Mat& q);

/// Inverse-distance weights with floor eps, normalized.
[[nodiscard]] Vec neighbor_weights(const Eigen::Vector2d& ref_pos, const std::vector<Eigen::Vector2d>& neighbor_pos,
                                   double eps = kNeighborEps);

/// B reference states with their neighbor states stacked column-wise;
/// neighbors of column b are nbr.cols [nbr_begin[b], nbr_begin[b+1]).
struct MotionBatch {
    Mat x;
    Mat h;
    Mat origin;
    Mat nbr;
    std::vector<Eigen::Index> nbr_begin;

    [[nodiscard]] Eigen::Index size() const { return x.cols(); }
};

struct MotionTape {
    nn::MlpTape enc_a;
    nn::MlpTape enc_b;
    nn::GruTape gru;
    nn::MlpTape dec;
    Vec nbr_weight;
};

struct MotionResult {
    Mat x_next;
    Mat h_next;
};

[[nodiscard]] MotionResult motion_forward_batch(const MotionParams& p, const MotionBatch& in,
                                                MotionTape* tape = nullptr);

/// Single-sample forward; s holds neighbor states as columns.
[[nodiscard]] MotionResult motion_forward(const Vec& x, const Mat& s, const Vec& h, const MotionParams& p,
                                          const Eigen::Vector2d& origin = Eigen::Vector2d::Zero());

/// Reverse pass: parameter gradients are added into grads; dh receives
/// dL/dh (inputs x and neighbor states are treated as data).
void motion_backward(const MotionParams& p, const MotionBatch& in, const MotionTape& tape, const Mat& dx_next,
                     const Mat& dh_next, MotionParams& grads, Mat* dh);

struct NeighborSet {
    std::vector<GaussianState> states;

    [[nodiscard]] int count() const { return static_cast<int>(states.size()); }
};

enum class PredictionStrategy { MeanOnly, ObjectSp, JointSp };

[[nodiscard]] const char* strategy_name(PredictionStrategy s);
[[nodiscard]] PredictionStrategy strategy_from_name(const std::string& s);

/// Previous-step summary of one PO as seen by the prediction.
struct MotionPrior {
    GaussianState gaussian;
    double existence = 0.0;
    Vec hidden;
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();
};

struct PredictedPo {
    GaussianState gaussian;
    double existence = 0.0;
    Vec hidden;
};

[[nodiscard]] PredictedPo sp_predict(const MotionPrior& po, const NeighborSet& neighbors, const MotionParams& p,
                                     const Mat& q, double p_s, const UTParams& ut, PredictionStrategy strategy);

/// Adds to grads the gradient of <dmean, predicted mean> with respect to
/// the motion parameters (sigma points and weights held fixed).
void sp_predict_backward(const MotionPrior& po, const NeighborSet& neighbors, const MotionParams& p,
                         const UTParams& ut, PredictionStrategy strategy, const Vec& dmean, MotionParams& grads);

}  // namespace bpmot::motion
