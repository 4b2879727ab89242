#include "bpmot/association.hpp"

#include "bpmot/errors.hpp"

#include <algorithm>
#include <cmath>

namespace bpmot::association {
namespace {

void validate(const AssociationProblem& p) {
    if (p.beta.cols() != p.xi.size() + 1) {
        throw Error(ErrorCode::DimensionMismatch, "association: beta must have J+1 columns");
    }
    if (!p.beta.allFinite() || !p.xi.allFinite() || (p.beta.array() < 0.0).any() ||
        (p.xi.array() < 0.0).any()) {
        throw Error(ErrorCode::DegenerateProblem, "association: weights must be finite and nonnegative");
    }
    for (Eigen::Index i = 0; i < p.beta.rows(); ++i) {
        if (!(p.beta.row(i).maxCoeff() > 0.0)) {
            throw Error(ErrorCode::DegenerateProblem, "association: beta row without positive entry");
        }
    }
}

void normalize_rows(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double s = m.row(r).sum();
        if (s > 0.0) m.row(r) /= s;
    }
}

struct Enumerator {
    const AssociationProblem& p;
    Eigen::Index ni, nj;
    std::vector<int> a;
    std::vector<int> used;  // object index + 1 claiming measurement j, 0 if free
    AssociationMarginals out;
    double total = 0.0;

    void visit(Eigen::Index i) {
        if (i == ni) {
            accumulate();
            return;
        }
        a[static_cast<std::size_t>(i)] = 0;
        visit(i + 1);
        for (Eigen::Index j = 0; j < nj; ++j) {
            if (used[static_cast<std::size_t>(j)] != 0) continue;
            used[static_cast<std::size_t>(j)] = static_cast<int>(i) + 1;
            a[static_cast<std::size_t>(i)] = static_cast<int>(j) + 1;
            visit(i + 1);
            used[static_cast<std::size_t>(j)] = 0;
        }
        a[static_cast<std::size_t>(i)] = 0;
    }

    // Products leaving out one factor are formed explicitly so that zero
    // weights do not need division.
    void accumulate() {
        std::vector<double> f;
        f.reserve(static_cast<std::size_t>(ni + nj));
        for (Eigen::Index i = 0; i < ni; ++i) f.push_back(p.beta(i, a[static_cast<std::size_t>(i)]));
        for (Eigen::Index j = 0; j < nj; ++j) {
            f.push_back(used[static_cast<std::size_t>(j)] == 0 ? p.xi[j] : 1.0);
        }
        const std::size_t nf = f.size();
        std::vector<double> prefix(nf + 1, 1.0), suffix(nf + 1, 1.0);
        for (std::size_t k = 0; k < nf; ++k) prefix[k + 1] = prefix[k] * f[k];
        for (std::size_t k = nf; k > 0; --k) suffix[k - 1] = suffix[k] * f[k - 1];
        const double w = prefix[nf];
        total += w;
        for (Eigen::Index i = 0; i < ni; ++i) {
            const auto k = static_cast<std::size_t>(i);
            out.kappa(i, a[k]) += w;
            out.kappa_msg(i, a[k]) += prefix[k] * suffix[k + 1];
        }
        for (Eigen::Index j = 0; j < nj; ++j) {
            const auto k = static_cast<std::size_t>(ni + j);
            const int b = used[static_cast<std::size_t>(j)];
            out.iota(j, b) += w;
            out.iota_msg(j, b) += prefix[k] * suffix[k + 1];
        }
    }
};

}  // namespace

bool consistency(const std::vector<int>& a, const std::vector<int>& b) {
    const int ni = static_cast<int>(a.size());
    const int nj = static_cast<int>(b.size());
    for (int v : a) {
        if (v < 0 || v > nj) throw Error(ErrorCode::DimensionMismatch, "consistency: a entry out of range");
    }
    for (int v : b) {
        if (v < 0 || v > ni) throw Error(ErrorCode::DimensionMismatch, "consistency: b entry out of range");
    }
    for (int i = 0; i < ni; ++i) {
        for (int j = 0; j < nj; ++j) {
            const bool ai = a[static_cast<std::size_t>(i)] == j + 1;
            const bool bj = b[static_cast<std::size_t>(j)] == i + 1;
            if (ai != bj) return false;
        }
    }
    return true;
}

AssociationMarginals enumerate_marginals(const AssociationProblem& p) {
    validate(p);
    const Eigen::Index ni = p.num_objects();
    const Eigen::Index nj = p.num_measurements();
    if (ni > 8 || nj > 8) throw Error(ErrorCode::TooLarge, "enumerate_marginals: I and J must be <= 8");
    Enumerator e{p, ni, nj, std::vector<int>(static_cast<std::size_t>(ni), 0),
                 std::vector<int>(static_cast<std::size_t>(nj), 0), {}, 0.0};
    e.out.kappa = Mat::Zero(ni, nj + 1);
    e.out.kappa_msg = Mat::Zero(ni, nj + 1);
    e.out.iota = Mat::Zero(nj, ni + 1);
    e.out.iota_msg = Mat::Zero(nj, ni + 1);
    e.visit(0);
    if (!(e.total > 0.0)) throw Error(ErrorCode::DegenerateProblem, "enumerate_marginals: zero joint mass");
    e.out.kappa /= e.total;
    e.out.iota /= e.total;
    normalize_rows(e.out.kappa_msg);
    normalize_rows(e.out.iota_msg);
    e.out.iterations = 0;
    e.out.converged = true;
    return e.out;
}

AssociationMarginals bp_marginals(const AssociationProblem& p, int max_iter, double tol) {
    validate(p);
    const Eigen::Index ni = p.num_objects();
    const Eigen::Index nj = p.num_measurements();
    constexpr double tiny = 1e-300;

    Mat mu = Mat::Zero(ni, nj);
    Mat nu = Mat::Ones(ni, nj);
    std::vector<bool> active(static_cast<std::size_t>(ni), false);
    for (Eigen::Index i = 0; i < ni; ++i) {
        active[static_cast<std::size_t>(i)] = nj > 0 && p.beta.row(i).tail(nj).maxCoeff() > 0.0;
    }

    AssociationMarginals out;
    out.converged = true;
    out.iterations = 0;
    if (ni > 0 && nj > 0) {
        out.converged = false;
        for (int it = 1; it <= max_iter; ++it) {
            double change = 0.0;
            Mat mu_new = Mat::Zero(ni, nj);
            for (Eigen::Index i = 0; i < ni; ++i) {
                if (!active[static_cast<std::size_t>(i)]) continue;
                for (Eigen::Index j = 0; j < nj; ++j) {
                    double den = p.beta(i, 0);
                    for (Eigen::Index k = 0; k < nj; ++k) {
                        if (k != j) den += p.beta(i, k + 1) * nu(i, k);
                    }
                    mu_new(i, j) = p.beta(i, j + 1) / std::max(den, tiny);
                }
            }
            Mat nu_new(ni, nj);
            for (Eigen::Index j = 0; j < nj; ++j) {
                for (Eigen::Index i = 0; i < ni; ++i) {
                    double den = p.xi[j];
                    for (Eigen::Index k = 0; k < ni; ++k) {
                        if (k != i) den += mu_new(k, j);
                    }
                    nu_new(i, j) = 1.0 / std::max(den, tiny);
                }
            }
            for (Eigen::Index i = 0; i < ni; ++i) {
                for (Eigen::Index j = 0; j < nj; ++j) {
                    const double dm = std::abs(mu_new(i, j) - mu(i, j)) / std::max(std::abs(mu_new(i, j)), tiny);
                    const double dn = std::abs(nu_new(i, j) - nu(i, j)) / std::max(std::abs(nu_new(i, j)), tiny);
                    change = std::max({change, mu_new(i, j) == mu(i, j) ? 0.0 : dm,
                                       nu_new(i, j) == nu(i, j) ? 0.0 : dn});
                }
            }
            mu = std::move(mu_new);
            nu = std::move(nu_new);
            out.iterations = it;
            if (!mu.allFinite() || !nu.allFinite()) {
                throw Error(ErrorCode::DegenerateProblem, "bp_marginals: non-finite message");
            }
            if (change < tol && it > 1) {
                out.converged = true;
                break;
            }
        }
    }

    out.kappa.resize(ni, nj + 1);
    out.kappa_msg.resize(ni, nj + 1);
    for (Eigen::Index i = 0; i < ni; ++i) {
        out.kappa(i, 0) = p.beta(i, 0);
        out.kappa_msg(i, 0) = 1.0;
        for (Eigen::Index j = 0; j < nj; ++j) {
            out.kappa(i, j + 1) = p.beta(i, j + 1) * nu(i, j);
            out.kappa_msg(i, j + 1) = nu(i, j);
        }
        if (!active[static_cast<std::size_t>(i)]) {
            out.kappa.row(i).setZero();
            out.kappa(i, 0) = 1.0;
        }
    }
    out.iota.resize(nj, ni + 1);
    out.iota_msg.resize(nj, ni + 1);
    for (Eigen::Index j = 0; j < nj; ++j) {
        out.iota(j, 0) = p.xi[j];
        out.iota_msg(j, 0) = 1.0;
        for (Eigen::Index i = 0; i < ni; ++i) {
            out.iota(j, i + 1) = mu(i, j);
            out.iota_msg(j, i + 1) = mu(i, j);
        }
    }
    normalize_rows(out.kappa);
    normalize_rows(out.kappa_msg);
    normalize_rows(out.iota);
    normalize_rows(out.iota_msg);
    return out;
}

}  // namespace bpmot::association
