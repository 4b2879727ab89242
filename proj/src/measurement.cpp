#include "bpmot/measurement.hpp"

#include "bpmot/errors.hpp"
#include "bpmot/log.hpp"

#include <cmath>
#include <numbers>

namespace bpmot::measurement {
namespace {

constexpr double kAffinityPosScale = 1.0;
constexpr double kVelScale = 10.0;
constexpr double kSizeScale = 5.0;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

EnhancementFactors EnhancementFactors::neutral(Eigen::Index num_objects, Eigen::Index num_meas) {
    return {Mat::Ones(num_objects, num_meas), Vec::Ones(num_meas)};
}

GaussianKernel::GaussianKernel(const Mat& sigma_r) {
    const Mat l = cholesky(sigma_r);
    const double logdet_half = l.diagonal().array().log().sum();
    if (!std::isfinite(logdet_half)) {
        throw Error(ErrorCode::NotPositiveDefinite, "measurement covariance is singular");
    }
    inv_l_ = l.triangularView<Eigen::Lower>().solve(Mat::Identity(l.rows(), l.cols()));
    norm_ = std::exp(-logdet_half - 0.5 * static_cast<double>(l.rows()) * std::log(2.0 * std::numbers::pi));
}

double GaussianKernel::operator()(const Vec& residual) const {
    return norm_ * std::exp(-0.5 * (inv_l_ * residual).squaredNorm());
}

Vec GaussianKernel::evaluate(const Vec& z, const Mat& xs) const {
    const Mat y = inv_l_ * (xs.colwise() - z);
    return (norm_ * (-0.5 * y.colwise().squaredNorm().array()).exp()).matrix().transpose();
}

double likelihood(const Measurement& z, const Vec& x, const Mat& sigma_r) {
    if (z.z.size() != x.size() || sigma_r.rows() != x.size()) {
        throw Error(ErrorCode::DimensionMismatch, "likelihood: dimension mismatch");
    }
    return GaussianKernel(sigma_r)(z.z - x);
}

MeasurementFeatures features_of(const Measurement& m) {
    MeasurementFeatures f;
    f.position = m.z.head<2>();
    f.velocity = m.z.segment<2>(2);
    f.box = m.box;
    f.score = m.score;
    f.shape = m.shape_feature;
    return f;
}

int affinity_input_dim(int shape_dim) { return 2 + 2 + 4 + shape_dim + 2 + 5 + shape_dim; }
int fpr_input_dim(int shape_dim) { return 2 + 5 + shape_dim; }

Vec affinity_input(const ObjectFeatures& o, const MeasurementFeatures& m) {
    const Eigen::Index ds = o.shape.size();
    if (m.shape.size() != ds) throw Error(ErrorCode::DimensionMismatch, "affinity_input: shape dims differ");
    Vec x(affinity_input_dim(static_cast<int>(ds)));
    Eigen::Index k = 0;
    x.segment<2>(k) = (o.position - m.position) / kAffinityPosScale;
    k += 2;
    x.segment<2>(k) = o.velocity / kVelScale;
    k += 2;
    x[k++] = o.box.length / kSizeScale;
    x[k++] = o.box.width / kSizeScale;
    x[k++] = std::cos(o.box.yaw);
    x[k++] = std::sin(o.box.yaw);
    x.segment(k, ds) = o.shape;
    k += ds;
    x.segment<2>(k) = m.velocity / kVelScale;
    k += 2;
    x[k++] = m.box.length / kSizeScale;
    x[k++] = m.box.width / kSizeScale;
    x[k++] = std::cos(m.box.yaw);
    x[k++] = std::sin(m.box.yaw);
    x[k++] = m.score;
    x.segment(k, ds) = m.shape;
    return x;
}

Vec fpr_input(const MeasurementFeatures& m) {
    const Eigen::Index ds = m.shape.size();
    Vec x(fpr_input_dim(static_cast<int>(ds)));
    x.head<2>() = m.velocity / kVelScale;
    x[2] = m.box.length / kSizeScale;
    x[3] = m.box.width / kSizeScale;
    x[4] = std::cos(m.box.yaw);
    x[5] = std::sin(m.box.yaw);
    x[6] = m.score;
    x.tail(ds) = m.shape;
    return x;
}

double affinity_from_logit(double logit, bool floor_at_one) {
    const double f = std::exp(logit);
    return floor_at_one ? std::max(f, 1.0) : f;
}

double affinity_factor(const ObjectFeatures& o, const MeasurementFeatures& m, const nn::Mlp& net, bool floor_at_one) {
    const Mat y = nn::mlp_forward(net, affinity_input(o, m));
    return affinity_from_logit(y(0, 0), floor_at_one);
}

double fpr_factor(const MeasurementFeatures& m, const nn::Mlp& net) {
    const Mat y = nn::mlp_forward(net, fpr_input(m));
    return nn::sigmoid(y(0, 0));
}

Mat particle_likelihoods(const ParticleSet& particles, const std::vector<Measurement>& meas,
                         const GaussianKernel& kernel) {
    Mat lik(particles.size(), static_cast<Eigen::Index>(meas.size()));
    for (std::size_t j = 0; j < meas.size(); ++j) {
        lik.col(static_cast<Eigen::Index>(j)) = kernel.evaluate(meas[j].z, particles.particles);
    }
    return lik;
}

double birth_overlap(const Vec& z, const MeasurementModel& model) {
    const Region& r = model.birth.region;
    const double lo[4] = {r.xmin, r.ymin, -r.vmax, -r.vmax};
    const double hi[4] = {r.xmax, r.ymax, r.vmax, r.vmax};
    double mass = 1.0;
    for (int c = 0; c < 4; ++c) {
        const double s = std::sqrt(model.sigma_r(c, c));
        mass *= normal_cdf((hi[c] - z[c]) / s) - normal_cdf((lo[c] - z[c]) / s);
    }
    return model.birth.density() * mass;
}

association::AssociationProblem build_association_problem(const std::vector<LegacyInput>& legacy,
                                                          const std::vector<Measurement>& meas,
                                                          const EnhancementFactors& factors,
                                                          const MeasurementModel& model,
                                                          const std::vector<Mat>* lik) {
    const auto ni = static_cast<Eigen::Index>(legacy.size());
    const auto nj = static_cast<Eigen::Index>(meas.size());
    if (factors.affinity.rows() != ni || factors.affinity.cols() != nj || factors.fpr.size() != nj) {
        throw Error(ErrorCode::DimensionMismatch, "build_association_problem: factor table shape");
    }
    if (!(model.clutter.mu_fp > 0.0)) {
        throw Error(ErrorCode::ConfigInvalid, "build_association_problem: mu_fp must be positive");
    }
    const double c_fp = model.clutter.intensity();
    const GaussianKernel kernel(model.sigma_r);

    association::AssociationProblem p;
    p.beta = Mat::Zero(ni, nj + 1);
    p.xi = Vec::Ones(nj);
    for (Eigen::Index i = 0; i < ni; ++i) {
        const auto& po = legacy[static_cast<std::size_t>(i)];
        const double e = po.existence;
        p.beta(i, 0) = (1.0 - e) + e * (1.0 - model.p_d);
        if (nj == 0) continue;
        const Mat l = lik ? (*lik)[static_cast<std::size_t>(i)] : particle_likelihoods(*po.particles, meas, kernel);
        const Vec avg = l.transpose() * po.particles->weights;
        for (Eigen::Index j = 0; j < nj; ++j) {
            p.beta(i, j + 1) = e * factors.fpr[j] * factors.affinity(i, j) * model.p_d * avg[j] / c_fp;
        }
    }
    for (Eigen::Index j = 0; j < nj; ++j) {
        p.xi[j] = 1.0 + factors.fpr[j] * model.birth.mu_n *
                            birth_overlap(meas[static_cast<std::size_t>(j)].z, model) / c_fp;
    }
    return p;
}

UpdatedPo update_legacy(const ParticleSet& predicted, double existence, const Vec& kappa_row, const Mat& lik,
                        const EnhancementFactors& factors, Eigen::Index row, const MeasurementModel& model,
                        Rng& rng) {
    const Eigen::Index nj = kappa_row.size() - 1;
    const double c_fp = model.clutter.intensity();
    Vec l = Vec::Constant(predicted.size(), kappa_row[0] * (1.0 - model.p_d));
    for (Eigen::Index j = 0; j < nj; ++j) {
        const double k = kappa_row[j + 1];
        if (k == 0.0) continue;
        const double scale = k * factors.fpr[j] * factors.affinity(row, j) * model.p_d / c_fp;
        l += scale * lik.col(j);
    }
    const Vec w = predicted.weights;
    const double m1 = existence * w.dot(l);
    const double m0 = (1.0 - existence) * kappa_row[0];

    UpdatedPo out;
    const int n = static_cast<int>(predicted.size());
    const Vec lw = l.cwiseProduct(w);
    if (!(lw.sum() > 0.0) || !std::isfinite(lw.sum())) {
        log::warn("update_legacy: particle weights underflowed, existence forced to 0");
        out.particles = predicted;
        out.gaussian = weighted_moments(predicted.particles, predicted.weights);
        out.existence = 0.0;
        out.degenerate = true;
        return out;
    }
    out.existence = m1 + m0 > 0.0 ? m1 / (m1 + m0) : 0.0;
    const std::vector<int> idx = systematic_resample(lw, n, rng);
    out.particles.particles.resize(predicted.particles.rows(), n);
    for (int k = 0; k < n; ++k) out.particles.particles.col(k) = predicted.particles.col(idx[static_cast<std::size_t>(k)]);
    out.particles.weights = Vec::Constant(n, 1.0 / n);
    out.gaussian = weighted_moments(out.particles.particles, out.particles.weights);
    return out;
}

double new_po_existence(double iota0, double xi_j) {
    const double v = iota0 * (xi_j - 1.0);
    return v > 0.0 ? v / (v + 1.0) : 0.0;
}

UpdatedPo init_new_po(const Measurement& z, double iota0, const MeasurementModel& model, double f_fpr,
                      int particle_count, Rng& rng) {
    const double xi = 1.0 + f_fpr * model.birth.mu_n * birth_overlap(z.z, model) / model.clutter.intensity();
    UpdatedPo out;
    out.existence = new_po_existence(iota0, xi);
    out.particles.particles = sample_gaussian({z.z, model.sigma_r}, particle_count, rng);
    out.particles.weights = Vec::Constant(particle_count, 1.0 / particle_count);
    out.gaussian = weighted_moments(out.particles.particles, out.particles.weights);
    return out;
}

}  // namespace bpmot::measurement
