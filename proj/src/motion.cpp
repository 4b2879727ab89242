#include "bpmot/motion.hpp"

#include "bpmot/errors.hpp"

#include <algorithm>
#include <cmath>

namespace bpmot::motion {

using nn::Activation;

MotionParams make_motion_params(int hidden_dim, int max_neighbors, MotionFrame frame, double dt, Rng& rng) {
    MotionParams p;
    p.hidden_dim = hidden_dim;
    p.max_neighbors = max_neighbors;
    p.frame = frame;
    p.dt = dt;
    const int l = kStateDim;
    p.encoder_a = nn::make_mlp({l + hidden_dim, hidden_dim, hidden_dim}, Activation::Relu, Activation::Tanh, rng);
    p.encoder_b = nn::make_mlp({l, hidden_dim, hidden_dim}, Activation::Relu, Activation::Tanh, rng);
    p.gru = nn::make_gru(2 * hidden_dim, hidden_dim, rng);
    p.decoder = nn::make_mlp({hidden_dim, hidden_dim, l}, Activation::Relu, Activation::Identity, rng);
    return p;
}

MotionParams linear_mode_params(int hidden_dim, int max_neighbors, double dt, Rng& rng) {
    MotionParams p = make_motion_params(hidden_dim, max_neighbors, MotionFrame::Local, dt, rng);
    p.decoder.layers.back().weight.setZero();
    p.decoder.layers.back().bias.setZero();
    return p;
}

MotionParams zeros_like(const MotionParams& p) {
    MotionParams z = p;
    z.encoder_a = nn::zeros_like(p.encoder_a);
    z.encoder_b = nn::zeros_like(p.encoder_b);
    z.gru = nn::zeros_like(p.gru);
    z.decoder = nn::zeros_like(p.decoder);
    return z;
}

void collect(MotionParams& p, const std::string& prefix, std::vector<nn::TensorRef>& out) {
    nn::collect(p.encoder_a, prefix + ".encoder_a", out);
    nn::collect(p.encoder_b, prefix + ".encoder_b", out);
    nn::collect(p.gru, prefix + ".gru", out);
    nn::collect(p.decoder, prefix + ".decoder", out);
}

Mat cv_transition(double dt) {
    Mat f = Mat::Identity(kStateDim, kStateDim);
    f(0, 2) = dt;
    f(1, 3) = dt;
    return f;
}

Mat cv_process_noise(double dt, double sigma_a) {
    Mat g = Mat::Zero(kStateDim, 2);
    g(0, 0) = 0.5 * dt * dt;
    g(1, 1) = 0.5 * dt * dt;
    g(2, 0) = dt;
    g(3, 1) = dt;
    return sigma_a * sigma_a * g * g.transpose();
}

GaussianState cv_predict(const GaussianState& g, double dt, const Mat& q) {
    const Mat f = cv_transition(dt);
    GaussianState out;
    out.mean = f * g.mean;
    out.cov = f * g.cov * f.transpose() + q;
    symmetrize(out.cov);
    return out;
}

Vec neighbor_weights(const Eigen::Vector2d& ref_pos, const std::vector<Eigen::Vector2d>& neighbor_pos, double eps) {
    Vec w(static_cast<Eigen::Index>(neighbor_pos.size()));
    for (std::size_t m = 0; m < neighbor_pos.size(); ++m) {
        w[static_cast<Eigen::Index>(m)] = 1.0 / std::max((neighbor_pos[m] - ref_pos).norm(), eps);
    }
    if (w.size() > 0) w /= w.sum();
    return w;
}

namespace {

Mat encoder_a_input(const MotionParams& p, const MotionBatch& in) {
    const Eigen::Index b = in.size();
    Mat a(kStateDim + p.hidden_dim, b);
    if (p.frame == MotionFrame::Local) {
        a.topRows(2) = (in.x.topRows(2) - in.origin) / p.pos_scale;
        a.middleRows(2, 2) = in.x.middleRows(2, 2) / p.vel_scale;
    } else {
        a.topRows(kStateDim) = in.x;
    }
    a.bottomRows(p.hidden_dim) = in.h;
    return a;
}

Mat encoder_b_input(const MotionParams& p, const MotionBatch& in) {
    Mat e = in.nbr;
    if (p.frame == MotionFrame::Local) {
        for (Eigen::Index b = 0; b < in.size(); ++b) {
            const auto lo = in.nbr_begin[static_cast<std::size_t>(b)];
            const auto hi = in.nbr_begin[static_cast<std::size_t>(b) + 1];
            for (Eigen::Index c = lo; c < hi; ++c) {
                e.block(0, c, 2, 1) = (in.nbr.block(0, c, 2, 1) - in.x.block(0, b, 2, 1)) / p.nbr_scale;
                e.block(2, c, 2, 1) = (in.nbr.block(2, c, 2, 1) - in.x.block(2, b, 2, 1)) / p.vel_scale;
            }
        }
    }
    return e;
}

void check_batch(const MotionParams& p, const MotionBatch& in) {
    const Eigen::Index b = in.size();
    if (in.x.rows() != kStateDim || in.h.rows() != p.hidden_dim || in.h.cols() != b ||
        in.nbr_begin.size() != static_cast<std::size_t>(b) + 1 || in.nbr.cols() != in.nbr_begin.back() ||
        (in.nbr.cols() > 0 && in.nbr.rows() != kStateDim) ||
        (p.frame == MotionFrame::Local && (in.origin.rows() != 2 || in.origin.cols() != b))) {
        throw Error(ErrorCode::DimensionMismatch, "motion_forward: batch dimensions do not match parameters");
    }
}

}  // namespace

MotionResult motion_forward_batch(const MotionParams& p, const MotionBatch& in, MotionTape* tape) {
    check_batch(p, in);
    const Eigen::Index b = in.size();
    const Eigen::Index d = p.hidden_dim;

    const Mat fx = nn::mlp_forward(p.encoder_a, encoder_a_input(p, in), tape ? &tape->enc_a : nullptr);

    Mat fs = Mat::Zero(d, b);
    Vec weights = Vec::Zero(in.nbr.cols());
    if (in.nbr.cols() > 0) {
        const Mat fb = nn::mlp_forward(p.encoder_b, encoder_b_input(p, in), tape ? &tape->enc_b : nullptr);
        for (Eigen::Index k = 0; k < b; ++k) {
            const auto lo = in.nbr_begin[static_cast<std::size_t>(k)];
            const auto hi = in.nbr_begin[static_cast<std::size_t>(k) + 1];
            if (hi == lo) continue;
            std::vector<Eigen::Vector2d> pos;
            for (Eigen::Index c = lo; c < hi; ++c) pos.emplace_back(in.nbr(0, c), in.nbr(1, c));
            const Vec w = neighbor_weights(Eigen::Vector2d(in.x(0, k), in.x(1, k)), pos);
            weights.segment(lo, hi - lo) = w;
            fs.col(k) = fb.middleCols(lo, hi - lo) * w;
        }
    }
    if (tape) tape->nbr_weight = weights;

    Mat u(2 * d, b);
    u.topRows(d) = fx;
    u.bottomRows(d) = fs;
    MotionResult out;
    out.h_next = nn::gru_forward(p.gru, u, in.h, tape ? &tape->gru : nullptr);
    const Mat dec = nn::mlp_forward(p.decoder, out.h_next, tape ? &tape->dec : nullptr);
    if (p.frame == MotionFrame::Local) {
        out.x_next = cv_transition(p.dt) * in.x;
        out.x_next.topRows(2) += p.pos_scale * dec.topRows(2);
        out.x_next.bottomRows(2) += p.vel_scale * dec.bottomRows(2);
    } else {
        out.x_next = dec;
    }
    return out;
}

MotionResult motion_forward(const Vec& x, const Mat& s, const Vec& h, const MotionParams& p,
                            const Eigen::Vector2d& origin) {
    MotionBatch in;
    in.x = x;
    in.h = h;
    in.origin = origin;
    in.nbr = s;
    in.nbr_begin = {0, s.cols()};
    return motion_forward_batch(p, in);
}

void motion_backward(const MotionParams& p, const MotionBatch& in, const MotionTape& tape, const Mat& dx_next,
                     const Mat& dh_next, MotionParams& grads, Mat* dh) {
    const Eigen::Index b = in.size();
    const Eigen::Index d = p.hidden_dim;

    Mat ddec = dx_next;
    if (p.frame == MotionFrame::Local) {
        ddec.topRows(2) *= p.pos_scale;
        ddec.bottomRows(2) *= p.vel_scale;
    }
    Mat dhn = nn::mlp_backward(p.decoder, tape.dec, ddec, grads.decoder);
    if (dh_next.size() > 0) dhn += dh_next;

    Mat du, dh_gru;
    nn::gru_backward(p.gru, tape.gru, dhn, grads.gru, du, dh_gru);

    const Mat da = nn::mlp_backward(p.encoder_a, tape.enc_a, du.topRows(d), grads.encoder_a);
    if (dh) *dh = dh_gru + da.bottomRows(d);

    if (in.nbr.cols() > 0) {
        Mat dfb(d, in.nbr.cols());
        for (Eigen::Index k = 0; k < b; ++k) {
            const auto lo = in.nbr_begin[static_cast<std::size_t>(k)];
            const auto hi = in.nbr_begin[static_cast<std::size_t>(k) + 1];
            for (Eigen::Index c = lo; c < hi; ++c) dfb.col(c) = tape.nbr_weight[c] * du.col(k).tail(d);
        }
        (void)nn::mlp_backward(p.encoder_b, tape.enc_b, dfb, grads.encoder_b);
    }
}

const char* strategy_name(PredictionStrategy s) {
    switch (s) {
        case PredictionStrategy::MeanOnly: return "mean-only";
        case PredictionStrategy::ObjectSp: return "object-sp";
        case PredictionStrategy::JointSp: return "joint-sp";
    }
    return "joint-sp";
}

PredictionStrategy strategy_from_name(const std::string& s) {
    if (s == "mean-only") return PredictionStrategy::MeanOnly;
    if (s == "object-sp") return PredictionStrategy::ObjectSp;
    if (s == "joint-sp") return PredictionStrategy::JointSp;
    throw Error(ErrorCode::ConfigInvalid, "unknown prediction strategy: " + s);
}

namespace {

struct SpBatch {
    MotionBatch batch;
    Vec wm;
    Vec wc;
};

SpBatch build_sp_batch(const MotionPrior& po, const NeighborSet& nb, const MotionParams& p, const UTParams& ut,
                       PredictionStrategy strategy) {
    const Eigen::Index l = kStateDim;
    const Eigen::Index mk = nb.count();
    if (po.gaussian.mean.size() != l || po.hidden.size() != p.hidden_dim) {
        throw Error(ErrorCode::DimensionMismatch, "sp_predict: prior dimensions do not match parameters");
    }
    SpBatch out;
    if (strategy == PredictionStrategy::MeanOnly) {
        out.batch.x = po.gaussian.mean;
        out.batch.nbr.resize(l, mk);
        for (Eigen::Index m = 0; m < mk; ++m) out.batch.nbr.col(m) = nb.states[static_cast<std::size_t>(m)].mean;
        out.batch.nbr_begin = {0, mk};
        out.wm = Vec::Ones(1);
        out.wc = Vec::Zero(1);
    } else {
        SigmaPointSet sp;
        const Eigen::Index n_stack = l * (mk + 1);
        if (strategy == PredictionStrategy::JointSp) {
            Vec mean(n_stack);
            Mat factor = Mat::Zero(n_stack, n_stack);
            mean.head(l) = po.gaussian.mean;
            factor.topLeftCorner(l, l) = cholesky(po.gaussian.cov);
            for (Eigen::Index m = 0; m < mk; ++m) {
                const auto& s = nb.states[static_cast<std::size_t>(m)];
                mean.segment(l * (m + 1), l) = s.mean;
                factor.block(l * (m + 1), l * (m + 1), l, l) = cholesky(s.cov);
            }
            sp = sigma_points_from_factor(mean, factor, ut, n_stack);
        } else {
            sp = sigma_points_from_factor(po.gaussian.mean, cholesky(po.gaussian.cov), ut, n_stack);
        }
        const Eigen::Index np = sp.points.cols();
        out.batch.x = sp.points.topRows(l);
        out.batch.nbr.resize(l, np * mk);
        out.batch.nbr_begin.resize(static_cast<std::size_t>(np) + 1);
        for (Eigen::Index c = 0; c < np; ++c) {
            out.batch.nbr_begin[static_cast<std::size_t>(c)] = c * mk;
            for (Eigen::Index m = 0; m < mk; ++m) {
                out.batch.nbr.col(c * mk + m) = strategy == PredictionStrategy::JointSp
                                                    ? Vec(sp.points.block(l * (m + 1), c, l, 1))
                                                    : nb.states[static_cast<std::size_t>(m)].mean;
            }
        }
        out.batch.nbr_begin.back() = np * mk;
        out.wm = sp.weights_mean;
        out.wc = sp.weights_cov;
    }
    const Eigen::Index np = out.batch.x.cols();
    out.batch.h = po.hidden.replicate(1, np);
    out.batch.origin = po.origin.replicate(1, np);
    return out;
}

}  // namespace

PredictedPo sp_predict(const MotionPrior& po, const NeighborSet& neighbors, const MotionParams& p, const Mat& q,
                       double p_s, const UTParams& ut, PredictionStrategy strategy) {
    const SpBatch spb = build_sp_batch(po, neighbors, p, ut, strategy);
    const MotionResult res = motion_forward_batch(p, spb.batch);
    PredictedPo out;
    out.gaussian.mean = res.x_next * spb.wm;
    const Mat centered = res.x_next.colwise() - out.gaussian.mean;
    out.gaussian.cov = centered * spb.wc.asDiagonal() * centered.transpose() + q;
    symmetrize(out.gaussian.cov);
    out.hidden = res.h_next * spb.wm;
    out.existence = po.existence * p_s;
    return out;
}

void sp_predict_backward(const MotionPrior& po, const NeighborSet& neighbors, const MotionParams& p,
                         const UTParams& ut, PredictionStrategy strategy, const Vec& dmean, MotionParams& grads) {
    const SpBatch spb = build_sp_batch(po, neighbors, p, ut, strategy);
    MotionTape tape;
    (void)motion_forward_batch(p, spb.batch, &tape);
    const Mat dx = dmean * spb.wm.transpose();
    motion_backward(p, spb.batch, tape, dx, Mat(), grads, nullptr);
}

}  // namespace bpmot::motion
