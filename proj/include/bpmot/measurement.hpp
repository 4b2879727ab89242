#pragma once

#include "bpmot/association.hpp"
#include "bpmot/neural.hpp"
#include "bpmot/numerics.hpp"

#include <vector>

namespace bpmot::measurement {

struct Box {
    double length = 1.0;
    double width = 1.0;
    double yaw = 0.0;
};

struct Measurement {
    Vec z;  // [px, py, vx, vy]
    double score = 1.0;
    Box box;
    Vec shape_feature;
    int class_id = 0;
};

/// Axis-aligned position rectangle times a symmetric velocity box.
struct Region {
    double xmin = -54.0;
    double xmax = 54.0;
    double ymin = -54.0;
    double ymax = 54.0;
    double vmax = 15.0;

    [[nodiscard]] double volume() const { return (xmax - xmin) * (ymax - ymin) * 4.0 * vmax * vmax; }
    [[nodiscard]] bool contains_position(double x, double y) const {
        return x >= xmin && x <= xmax && y >= ymin && y <= ymax;
    }
};

struct ClutterModel {
    double mu_fp = 1.0;
    Region region;

    [[nodiscard]] double density() const { return 1.0 / region.volume(); }
    /// C_fp; the uniform density is treated as constant for any z.
    [[nodiscard]] double intensity() const { return mu_fp * density(); }
};

struct BirthModel {
    double mu_n = 0.5;
    Region region;

    [[nodiscard]] double density() const { return 1.0 / region.volume(); }
};

struct EnhancementFactors {
    Mat affinity;  // I x J, > 0
    Vec fpr;       // J, in (0, 1]

    [[nodiscard]] static EnhancementFactors neutral(Eigen::Index num_objects, Eigen::Index num_meas);
};

struct MeasurementModel {
    Mat sigma_r = Mat::Identity(4, 4);
    double p_d = 0.9;
    ClutterModel clutter;
    BirthModel birth;
};

/// Precomputed N(. ; 0, sigma_r) evaluator.
class GaussianKernel {
public:
    explicit GaussianKernel(const Mat& sigma_r);
    [[nodiscard]] double operator()(const Vec& residual) const;
    /// Densities of z - column for every column of xs.
    [[nodiscard]] Vec evaluate(const Vec& z, const Mat& xs) const;

private:
    Mat inv_l_;
    double norm_;
};

[[nodiscard]] double likelihood(const Measurement& z, const Vec& x, const Mat& sigma_r);

/// Kinematic and shape features of a legacy PO used by the affinity factor.
struct ObjectFeatures {
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
    Box box;
    Vec shape;
};

struct MeasurementFeatures {
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
    Box box;
    double score = 1.0;
    Vec shape;
};

[[nodiscard]] MeasurementFeatures features_of(const Measurement& m);

[[nodiscard]] int affinity_input_dim(int shape_dim);
[[nodiscard]] int fpr_input_dim(int shape_dim);
/// Offsets of the shape slices inside the factor inputs.
inline constexpr int kAffinityObjectShapeOffset = 8;
[[nodiscard]] inline int affinity_meas_shape_offset(int shape_dim) { return 15 + shape_dim; }
inline constexpr int kFprShapeOffset = 7;

/// df = [p_obj - p_meas; v_obj; u_obj; f_sa_obj; v_meas; u_meas; f_sa_meas]
/// with fixed unit scalings; u = (length, width, cos yaw, sin yaw[, score]).
[[nodiscard]] Vec affinity_input(const ObjectFeatures& o, const MeasurementFeatures& m);
[[nodiscard]] Vec fpr_input(const MeasurementFeatures& m);

[[nodiscard]] double affinity_from_logit(double logit, bool floor_at_one);
[[nodiscard]] double affinity_factor(const ObjectFeatures& o, const MeasurementFeatures& m, const nn::Mlp& net,
                                     bool floor_at_one = false);
[[nodiscard]] double fpr_factor(const MeasurementFeatures& m, const nn::Mlp& net);

/// Per-particle likelihoods of every measurement for one PO (N x J).
[[nodiscard]] Mat particle_likelihoods(const ParticleSet& particles, const std::vector<Measurement>& meas,
                                       const GaussianKernel& kernel);

/// Closed-form integral of f_n(x) N(z; x, sigma_r) over the birth support
/// (diagonal sigma_r).
[[nodiscard]] double birth_overlap(const Vec& z, const MeasurementModel& model);

struct LegacyInput {
    const ParticleSet* particles = nullptr;
    double existence = 0.0;
};

/// beta / xi tables; lik (optional) holds precomputed particle_likelihoods
/// per PO.
[[nodiscard]] association::AssociationProblem build_association_problem(
    const std::vector<LegacyInput>& legacy, const std::vector<Measurement>& meas,
    const EnhancementFactors& factors, const MeasurementModel& model, const std::vector<Mat>* lik = nullptr);

struct UpdatedPo {
    ParticleSet particles;
    GaussianState gaussian;
    double existence = 0.0;
    bool degenerate = false;
};

/// Particle reweighting by l_ne with the normalized extrinsic kappa row,
/// existence update, systematic resampling and Gaussian summary.
[[nodiscard]] UpdatedPo update_legacy(const ParticleSet& predicted, double existence, const Vec& kappa_row,
                                      const Mat& lik, const EnhancementFactors& factors, Eigen::Index row,
                                      const MeasurementModel& model, Rng& rng);

/// Existence of a PO born from measurement j given the normalized
/// extrinsic iota(b_j = 0).
[[nodiscard]] double new_po_existence(double iota0, double xi_j);

[[nodiscard]] UpdatedPo init_new_po(const Measurement& z, double iota0, const MeasurementModel& model, double f_fpr,
                                    int particle_count, Rng& rng);

}  // namespace bpmot::measurement
