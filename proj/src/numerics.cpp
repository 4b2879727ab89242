#include "bpmot/numerics.hpp"

#include "bpmot/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace bpmot {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), key_(mix64(seed + kGolden)) {}

Rng Rng::split(std::uint64_t stream) const {
    return Rng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::poisson(double mean) {
    if (mean <= 0.0) return 0;
    std::poisson_distribution<int> dist(mean);
    return dist(*this);
}

double Rng::gamma(double shape) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(*this);
}

double Rng::beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

Mat cholesky(const Mat& c) {
    if (c.rows() != c.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "cholesky: matrix is not square");
    }
    const Eigen::Index n = c.rows();
    if (n == 0) return Mat(0, 0);
    if (!c.allFinite()) {
        throw Error(ErrorCode::NotPositiveDefinite, "cholesky: non-finite entries");
    }
    if (c.isZero(0.0)) return Mat::Zero(n, n);
    Eigen::LLT<Mat> llt(c);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const double jitter = 1e-9 * c.trace() / static_cast<double>(n);
    if (jitter > 0.0) {
        Mat cj = c;
        cj.diagonal().array() += jitter;
        Eigen::LLT<Mat> retry(cj);
        if (retry.info() == Eigen::Success) return retry.matrixL();
    }
    throw Error(ErrorCode::NotPositiveDefinite, "cholesky: matrix not positive definite after jitter");
}

double gaussian_logpdf(const Vec& x, const GaussianState& g) {
    if (x.size() != g.mean.size() || g.cov.rows() != g.mean.size()) {
        throw Error(ErrorCode::DimensionMismatch, "gaussian_logpdf: dimension mismatch");
    }
    const Mat l = cholesky(g.cov);
    const double logdet_half = l.diagonal().array().log().sum();
    if (!std::isfinite(logdet_half)) {
        throw Error(ErrorCode::NotPositiveDefinite, "gaussian_logpdf: singular covariance");
    }
    const Vec y = l.triangularView<Eigen::Lower>().solve(x - g.mean);
    const double n = static_cast<double>(x.size());
    return -0.5 * y.squaredNorm() - logdet_half - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

std::vector<int> systematic_resample(const Vec& weights, int n, Rng& rng) {
    const double total = weights.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw Error(ErrorCode::EmptyWeights, "systematic_resample: weights have no mass");
    }
    std::vector<int> idx(static_cast<std::size_t>(n));
    const double step = 1.0 / n;
    const double u0 = rng.uniform() * step;
    const Eigen::Index m = weights.size();
    Eigen::Index i = 0;
    double cum = weights[0] / total;
    for (int k = 0; k < n; ++k) {
        const double u = u0 + k * step;
        while (u >= cum && i < m - 1) {
            ++i;
            cum += weights[i] / total;
        }
        idx[static_cast<std::size_t>(k)] = static_cast<int>(i);
    }
    return idx;
}

SigmaPointSet sigma_points_from_factor(const Vec& mean, const Mat& factor, const UTParams& ut,
                                       Eigen::Index scaling_dim) {
    const Eigen::Index n = mean.size();
    if (factor.rows() != n || factor.cols() > scaling_dim) {
        throw Error(ErrorCode::DimensionMismatch, "sigma points: factor shape mismatch");
    }
    const Eigen::Index q = factor.cols();
    const double ns = static_cast<double>(scaling_dim);
    const double lambda = ut.alpha * ut.alpha * (ns + ut.kappa) - ns;
    const double spread = std::sqrt(ns + lambda);
    const double wi = 1.0 / (2.0 * (ns + lambda));

    SigmaPointSet sp;
    sp.points.resize(n, 2 * q + 1);
    sp.weights_mean.resize(2 * q + 1);
    sp.weights_cov.resize(2 * q + 1);
    sp.points.col(0) = mean;
    const double w0 = 1.0 - 2.0 * static_cast<double>(q) * wi;
    sp.weights_mean[0] = w0;
    sp.weights_cov[0] = w0 + (1.0 - ut.alpha * ut.alpha + ut.beta);
    for (Eigen::Index c = 0; c < q; ++c) {
        sp.points.col(1 + c) = mean + spread * factor.col(c);
        sp.points.col(1 + q + c) = mean - spread * factor.col(c);
        sp.weights_mean[1 + c] = wi;
        sp.weights_mean[1 + q + c] = wi;
        sp.weights_cov[1 + c] = wi;
        sp.weights_cov[1 + q + c] = wi;
    }
    return sp;
}

SigmaPointSet generate_sigma_points(const GaussianState& g, const UTParams& ut) {
    const Mat l = cholesky(g.cov);
    return sigma_points_from_factor(g.mean, l, ut, g.mean.size());
}

Mat sample_gaussian(const GaussianState& g, int n, Rng& rng) {
    const Mat l = cholesky(g.cov);
    const Eigen::Index d = g.mean.size();
    Mat eps(d, n);
    for (int c = 0; c < n; ++c) {
        for (Eigen::Index r = 0; r < d; ++r) eps(r, c) = rng.normal();
    }
    Mat out = l.triangularView<Eigen::Lower>() * eps;
    out.colwise() += g.mean;
    return out;
}

GaussianState weighted_moments(const Mat& points, const Vec& weights) {
    GaussianState g;
    g.mean = points * weights;
    const Mat centered = points.colwise() - g.mean;
    g.cov = centered * weights.asDiagonal() * centered.transpose();
    symmetrize(g.cov);
    return g;
}

}  // namespace bpmot
