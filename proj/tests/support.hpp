#pragma once

#include "bpmot/errors.hpp"
#include "bpmot/neural.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace bpmot::testing {

/// Central-difference check of analytic gradients over every entry of
/// params. Returns the worst relative error ||g_fd - g_an|| / (||g_fd|| + ||g_an||)
/// per tensor (tensors whose gradients are both ~0 count as 0).
inline double gradient_check(const std::vector<nn::TensorRef>& params, const std::vector<nn::TensorRef>& grads,
                             const std::function<double()>& loss, double step = 1e-5,
                             std::string* worst_name = nullptr) {
    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto& p = params[t];
        double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
        for (Eigen::Index k = 0; k < p.size(); ++k) {
            const double orig = p.data[k];
            p.data[k] = orig + step;
            const double lp = loss();
            p.data[k] = orig - step;
            const double lm = loss();
            p.data[k] = orig;
            const double fd = (lp - lm) / (2.0 * step);
            const double an = grads[t].data[k];
            diff2 += (fd - an) * (fd - an);
            fd2 += fd * fd;
            an2 += an * an;
        }
        const double denom = std::sqrt(fd2) + std::sqrt(an2);
        const double rel = denom < 1e-10 ? 0.0 : std::sqrt(diff2) / denom;
        if (rel > worst) {
            worst = rel;
            if (worst_name) *worst_name = p.name;
        }
    }
    return worst;
}

/// Same check for an input matrix.
inline double input_gradient_check(Mat& x, const Mat& grad, const std::function<double()>& loss, double step = 1e-5) {
    double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double orig = x.data()[k];
        x.data()[k] = orig + step;
        const double lp = loss();
        x.data()[k] = orig - step;
        const double lm = loss();
        x.data()[k] = orig;
        const double fd = (lp - lm) / (2.0 * step);
        diff2 += (fd - grad.data()[k]) * (fd - grad.data()[k]);
        fd2 += fd * fd;
        an2 += grad.data()[k] * grad.data()[k];
    }
    const double denom = std::sqrt(fd2) + std::sqrt(an2);
    return denom < 1e-10 ? 0.0 : std::sqrt(diff2) / denom;
}

inline Mat random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
    return m;
}

/// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("bpmot_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

template <class F>
ErrorCode error_code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    throw std::runtime_error("expected a bpmot::Error");
}

}  // namespace bpmot::testing
