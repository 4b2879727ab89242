#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <vector>

namespace bpmot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Gaussian summary of a state density.
struct GaussianState {
    Vec mean;
    Mat cov;
};

/// Weighted particle cloud; particles are stored column-wise (dim x N).
struct ParticleSet {
    Mat particles;
    Vec weights;

    [[nodiscard]] Eigen::Index size() const { return particles.cols(); }
};

struct SigmaPointSet {
    Mat points;  // dim x P
    Vec weights_mean;
    Vec weights_cov;
};

/// Scaled unscented transform parameters.
struct UTParams {
    double alpha = 0.5;
    double beta = 2.0;
    double kappa = 0.0;
};

/// Counter-based generator: output i is a SplitMix64 hash of (key, i).
/// Satisfies UniformRandomBitGenerator so std distributions can use it.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0);

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

    /// Independent stream derived from this generator's seed.
    [[nodiscard]] Rng split(std::uint64_t stream) const;

    std::uint64_t next_u64();
    result_type operator()() { return next_u64(); }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    double normal();
    int poisson(double mean);
    double gamma(double shape);
    double beta(double a, double b);
    bool bernoulli(double p);

private:
    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Lower Cholesky factor with one diagonal-jitter retry (1e-9 * trace / n).
/// An all-zero matrix factors to zero.
[[nodiscard]] Mat cholesky(const Mat& c);

[[nodiscard]] double gaussian_logpdf(const Vec& x, const GaussianState& g);

/// Systematic resampling; returns n indices into weights.
[[nodiscard]] std::vector<int> systematic_resample(const Vec& weights, int n, Rng& rng);

[[nodiscard]] SigmaPointSet generate_sigma_points(const GaussianState& g, const UTParams& ut);

/// Sigma points for an already factored covariance. scaling_dim sets the
/// dimension used for the UT scaling (>= factor.cols()); points beyond the
/// factor's columns would coincide with the mean and are folded into the
/// centre weight.
[[nodiscard]] SigmaPointSet sigma_points_from_factor(const Vec& mean, const Mat& factor,
                                                     const UTParams& ut, Eigen::Index scaling_dim);

/// Draws n samples (columns) from g.
[[nodiscard]] Mat sample_gaussian(const GaussianState& g, int n, Rng& rng);

/// Weighted sample mean and covariance of columns.
[[nodiscard]] GaussianState weighted_moments(const Mat& points, const Vec& weights);

/// Symmetrizes in place.
void symmetrize(Mat& m);

}  // namespace bpmot
