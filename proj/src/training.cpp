#include "bpmot/training.hpp"

#include "bpmot/errors.hpp"
#include "bpmot/evaluation.hpp"
#include "bpmot/log.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

namespace bpmot::train {
namespace {

constexpr double kProbClamp = 1e-12;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

void scale_grads(NetworkParams& g, double s) {
    std::vector<nn::TensorRef> t;
    collect_all(g, t);
    for (auto& r : t) {
        for (Eigen::Index k = 0; k < r.size(); ++k) r.data[k] *= s;
    }
}

bool grads_finite(NetworkParams& g) {
    std::vector<nn::TensorRef> t;
    collect_all(g, t);
    for (auto& r : t) {
        for (Eigen::Index k = 0; k < r.size(); ++k) {
            if (!std::isfinite(r.data[k])) return false;
        }
    }
    return true;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(i)), i - 1);
        std::swap(v[i - 1], v[j]);
    }
}

struct GtTrack {
    int first_frame = 0;
    std::vector<Vec> states;
};

std::vector<GtTrack> gt_tracks(const sim::Scene& scene) {
    std::vector<GtTrack> out;
    std::map<int, std::size_t> index;
    for (std::size_t k = 0; k < scene.frames.size(); ++k) {
        for (const auto& g : scene.frames[k].gt) {
            auto it = index.find(g.id);
            if (it == index.end()) {
                it = index.emplace(g.id, out.size()).first;
                out.push_back({static_cast<int>(k), {}});
            }
            out[it->second].states.push_back(g.state);
        }
    }
    return out;
}

struct StepRecord {
    motion::MotionBatch batch;
    motion::MotionTape tape;
    std::vector<std::size_t> active;
    Mat dx;
};

}  // namespace

void validate(const TrainConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw Error(ErrorCode::ConfigInvalid, "train." + field + ": " + why);
    };
    if (c.w_fpr < 0.0) fail("w_fpr", "must be >= 0");
    if (c.w_meas < 0.0) fail("w_meas", "must be >= 0");
    if (!(c.lr_joint > 0.0)) fail("lr_joint", "must be > 0");
    if (!(c.lr_pre > 0.0)) fail("lr_pre", "must be > 0");
    if (c.batch_joint < 1) fail("batch_joint", "must be >= 1");
    if (c.batch_pre < 1) fail("batch_pre", "must be >= 1");
    if (c.epochs_pre < 0) fail("epochs_pre", "must be >= 0");
    if (c.epochs_joint < 0) fail("epochs_joint", "must be >= 0");
    if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) fail("val_fraction", "must be in [0, 1)");
    if (!(c.gate > 0.0)) fail("gate", "must be > 0");
    if (c.particle_count < 1) fail("particle_count", "must be >= 1");
    const auto& a = c.augment;
    if (a.noise_pos < 0.0 || a.noise_vel < 0.0 || a.bias_pos < 0.0 || a.bias_vel < 0.0) {
        fail("augment", "magnitudes must be >= 0");
    }
    if (a.drop_prob < 0.0 || a.drop_prob > 1.0) fail("augment.drop_prob", "must be in [0, 1]");
}

double motion_loss(const std::vector<Vec>& estimates, const std::vector<Vec>& gt,
                   const std::vector<std::pair<int, int>>& matches, std::vector<Vec>* grad) {
    if (grad) {
        grad->clear();
        for (const auto& e : estimates) grad->push_back(Vec::Zero(e.size()));
    }
    if (matches.empty()) {
        log::warn("motion_loss: no matched pairs, loss set to 0");
        return 0.0;
    }
    const double n = static_cast<double>(matches.size());
    double sum = 0.0;
    for (const auto& [e, g] : matches) {
        const Vec d = estimates[static_cast<std::size_t>(e)] - gt[static_cast<std::size_t>(g)];
        sum += d.lpNorm<1>();
        if (grad) (*grad)[static_cast<std::size_t>(e)] += d.unaryExpr([](double x) { return (x > 0) - (x < 0) + 0.0; }) / n;
    }
    return sum / n;
}

double affinity_loss(const Mat& f_af, const Mat& af_gt, Mat* dlogit) {
    if (f_af.rows() != af_gt.rows() || f_af.cols() != af_gt.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "affinity_loss: table shapes differ");
    }
    const double npos = af_gt.sum();
    const double nneg = static_cast<double>(af_gt.size()) - npos;
    double l1 = 0.0;
    double l2 = 0.0;
    if (dlogit) *dlogit = Mat::Zero(f_af.rows(), f_af.cols());
    for (Eigen::Index i = 0; i < f_af.rows(); ++i) {
        for (Eigen::Index j = 0; j < f_af.cols(); ++j) {
            const double f = f_af(i, j);
            const double s = std::isinf(f) ? 1.0 : f / (1.0 + f);
            if (af_gt(i, j) > 0.5) {
                l1 -= std::log(clamp_prob(s));
                if (dlogit) (*dlogit)(i, j) = -(1.0 - s) / npos;
            } else {
                l2 -= std::log(clamp_prob(1.0 - s));
                if (dlogit) (*dlogit)(i, j) = s / nneg;
            }
        }
    }
    return (npos > 0 ? l1 / npos : 0.0) + (nneg > 0 ? l2 / nneg : 0.0);
}

double fpr_loss(const Vec& f_fpr, const Vec& fpr_gt, double w_fpr, Vec* dlogit) {
    if (f_fpr.size() != fpr_gt.size()) throw Error(ErrorCode::DimensionMismatch, "fpr_loss: lengths differ");
    const double npos = fpr_gt.sum();
    const double nneg = static_cast<double>(fpr_gt.size()) - npos;
    double l1 = 0.0;
    double l2 = 0.0;
    if (dlogit) *dlogit = Vec::Zero(f_fpr.size());
    for (Eigen::Index j = 0; j < f_fpr.size(); ++j) {
        const double f = f_fpr[j];
        if (fpr_gt[j] > 0.5) {
            l1 -= std::log(clamp_prob(f));
            if (dlogit) (*dlogit)[j] = -(1.0 - f) / npos;
        } else {
            l2 -= w_fpr * std::log(clamp_prob(1.0 - f));
            if (dlogit) (*dlogit)[j] = w_fpr * f / nneg;
        }
    }
    return (npos > 0 ? l1 / npos : 0.0) + (nneg > 0 ? l2 / nneg : 0.0);
}

double joint_loss(double motion, double meas, double w_meas) { return motion + w_meas * meas; }

MatchLabels label_frame(const std::vector<sim::GtObject>& gt, const std::vector<measurement::Measurement>& meas,
                        const std::vector<Vec>& legacy, double gate) {
    const auto ng = static_cast<Eigen::Index>(gt.size());
    const auto nj = static_cast<Eigen::Index>(meas.size());
    const auto ni = static_cast<Eigen::Index>(legacy.size());
    MatchLabels out;
    out.af_gt = Mat::Zero(ni, nj);
    out.fpr_gt = Vec::Zero(nj);

    Mat dm(ng, nj);
    for (Eigen::Index g = 0; g < ng; ++g) {
        for (Eigen::Index j = 0; j < nj; ++j) {
            dm(g, j) = (gt[static_cast<std::size_t>(g)].state.head<2>() - meas[static_cast<std::size_t>(j)].z.head<2>()).norm();
        }
    }
    std::vector<int> meas_of_gt(gt.size(), -1);
    for (const auto& [g, j] : eval::gated_match(dm, gate)) {
        meas_of_gt[static_cast<std::size_t>(g)] = j;
        out.fpr_gt[j] = 1.0;
    }

    Mat dl(ni, ng);
    for (Eigen::Index i = 0; i < ni; ++i) {
        for (Eigen::Index g = 0; g < ng; ++g) {
            dl(i, g) = (legacy[static_cast<std::size_t>(i)].head<2>() - gt[static_cast<std::size_t>(g)].state.head<2>()).norm();
        }
    }
    for (const auto& [i, g] : eval::gated_match(dl, gate)) {
        out.motion_pairs.emplace_back(i, g);
        const int j = meas_of_gt[static_cast<std::size_t>(g)];
        if (j >= 0) out.af_gt(i, j) = 1.0;
    }
    return out;
}

AugmentedTrack augment(const std::vector<Vec>& track, const AugmentConfig& cfg, Rng& rng) {
    AugmentedTrack out;
    Vec bias = Vec::Zero(motion::kStateDim);
    bias << cfg.bias_pos * rng.normal(), cfg.bias_pos * rng.normal(), cfg.bias_vel * rng.normal(),
        cfg.bias_vel * rng.normal();
    for (std::size_t k = 0; k < track.size(); ++k) {
        if (cfg.drop_prob > 0.0 && rng.bernoulli(cfg.drop_prob)) continue;
        Vec x = track[k] + bias;
        x[0] += cfg.noise_pos * rng.normal();
        x[1] += cfg.noise_pos * rng.normal();
        x[2] += cfg.noise_vel * rng.normal();
        x[3] += cfg.noise_vel * rng.normal();
        out.kept.push_back(static_cast<int>(k));
        out.states.push_back(std::move(x));
    }
    return out;
}

void split_scenes(std::size_t n, double val_fraction, std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
    train.clear();
    val.clear();
    auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n) + 0.5));
    if (n_val >= n && n > 0) n_val = n - 1;
    for (std::size_t i = 0; i < n; ++i) (i + n_val < n ? train : val).push_back(i);
}

std::pair<double, long> motion_sequence_loss(const NetworkParams& p, const sim::Scene& scene, const AugmentConfig& aug,
                                             Rng& rng, NetworkParams* grads) {
    const auto& mp = p.motion;
    const double dt = mp.dt;
    const auto tracks = gt_tracks(scene);
    const std::size_t n = tracks.size();
    std::vector<std::vector<std::optional<Vec>>> meas(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = augment(tracks[i].states, aug, rng);
        meas[i].assign(tracks[i].states.size(), std::nullopt);
        for (std::size_t k = 0; k < a.kept.size(); ++k) meas[i][static_cast<std::size_t>(a.kept[k])] = a.states[k];
    }

    std::vector<std::optional<Vec>> input(n);
    std::vector<Vec> hidden(n);
    std::vector<Eigen::Vector2d> origin(n);
    std::vector<Vec> pred(n);
    std::vector<bool> started(n, false);
    std::vector<StepRecord> records;
    double loss = 0.0;
    long terms = 0;
    const int frames = static_cast<int>(scene.frames.size());
    for (int k = 0; k < frames; ++k) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < n; ++i) {
            const int off = k - tracks[i].first_frame;
            input[i].reset();
            if (off < 0 || off >= static_cast<int>(tracks[i].states.size())) continue;
            const auto& m = meas[i][static_cast<std::size_t>(off)];
            if (m) {
                if (!started[i]) {
                    started[i] = true;
                    origin[i] = m->head<2>() - dt * m->segment<2>(2);
                    hidden[i] = Vec::Zero(mp.hidden_dim);
                }
                input[i] = *m;
            } else if (started[i]) {
                input[i] = pred[i];
            }
            if (input[i] && off + 1 < static_cast<int>(tracks[i].states.size())) active.push_back(i);
        }
        if (active.empty()) continue;
        StepRecord rec;
        rec.active = active;
        auto& b = rec.batch;
        const auto na = static_cast<Eigen::Index>(active.size());
        b.x.resize(motion::kStateDim, na);
        b.h.resize(mp.hidden_dim, na);
        b.origin.resize(2, na);
        std::vector<Vec> nbr_cols;
        b.nbr_begin.push_back(0);
        for (Eigen::Index a = 0; a < na; ++a) {
            const std::size_t i = active[static_cast<std::size_t>(a)];
            b.x.col(a) = *input[i];
            b.h.col(a) = hidden[i];
            b.origin.col(a) = origin[i];
            std::vector<std::pair<double, std::size_t>> cand;
            for (std::size_t o = 0; o < n; ++o) {
                if (o == i || !input[o]) continue;
                cand.emplace_back((input[o]->head<2>() - input[i]->head<2>()).norm(), o);
            }
            std::sort(cand.begin(), cand.end());
            const std::size_t mk = std::min(cand.size(), static_cast<std::size_t>(mp.max_neighbors));
            for (std::size_t c = 0; c < mk; ++c) nbr_cols.push_back(*input[cand[c].second]);
            b.nbr_begin.push_back(static_cast<Eigen::Index>(nbr_cols.size()));
        }
        b.nbr.resize(motion::kStateDim, static_cast<Eigen::Index>(nbr_cols.size()));
        for (std::size_t c = 0; c < nbr_cols.size(); ++c) b.nbr.col(static_cast<Eigen::Index>(c)) = nbr_cols[c];
        const auto res = motion::motion_forward_batch(mp, b, grads ? &rec.tape : nullptr);
        rec.dx = Mat::Zero(motion::kStateDim, na);
        for (Eigen::Index a = 0; a < na; ++a) {
            const std::size_t i = active[static_cast<std::size_t>(a)];
            const int off = k - tracks[i].first_frame;
            const Vec d = res.x_next.col(a) - tracks[i].states[static_cast<std::size_t>(off + 1)];
            loss += d.lpNorm<1>();
            ++terms;
            rec.dx.col(a) = d.unaryExpr([](double x) { return (x > 0) - (x < 0) + 0.0; });
            pred[i] = res.x_next.col(a);
            hidden[i] = res.h_next.col(a);
            origin[i] = input[i]->head<2>();
        }
        if (grads) records.push_back(std::move(rec));
    }

    if (grads) {
        std::vector<Vec> dh_carry(n);
        for (auto it = records.rbegin(); it != records.rend(); ++it) {
            const auto na = static_cast<Eigen::Index>(it->active.size());
            Mat dh_next = Mat::Zero(mp.hidden_dim, na);
            for (Eigen::Index a = 0; a < na; ++a) {
                const auto& c = dh_carry[it->active[static_cast<std::size_t>(a)]];
                if (c.size() > 0) dh_next.col(a) = c;
            }
            Mat dh;
            motion::motion_backward(mp, it->batch, it->tape, it->dx, dh_next, grads->motion, &dh);
            for (Eigen::Index a = 0; a < na; ++a) dh_carry[it->active[static_cast<std::size_t>(a)]] = dh.col(a);
        }
    }
    return {loss, terms};
}

namespace {

double validation_motion_loss(const NetworkParams& p, const std::vector<sim::Scene>& scenes,
                              const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
    double sum = 0.0;
    long terms = 0;
    for (const std::size_t s : idx) {
        Rng rng = Rng(cfg.seed).split(0xFA11u + s);
        const auto [l, t] = motion_sequence_loss(p, scenes[s], cfg.augment, rng, nullptr);
        sum += l;
        terms += t;
    }
    return terms > 0 ? sum / static_cast<double>(terms) : 0.0;
}

}  // namespace

TrainResult pretrain_motion(const std::vector<sim::Scene>& scenes, const NetworkParams& init, const TrainConfig& cfg) {
    validate(cfg);
    TrainResult out;
    out.params = init;
    NetworkParams p = init;
    std::vector<std::size_t> train_idx, val_idx;
    split_scenes(scenes.size(), cfg.val_fraction, train_idx, val_idx);
    if (val_idx.empty()) val_idx = train_idx;

    std::vector<nn::TensorRef> params;
    collect_motion(p, params);
    nn::AdamState adam;
    adam.lr = cfg.lr_pre;
    Rng rng = Rng(cfg.seed).split(0x9E7u);

    const auto t0 = std::chrono::steady_clock::now();
    double best = validation_motion_loss(p, scenes, val_idx, cfg);
    out.log.push_back({0, best, best, best, 0.0, 0.0, 0.0});
    std::vector<std::size_t> ntracks(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) ntracks[s] = gt_tracks(scenes[s]).size();

    for (int epoch = 1; epoch <= cfg.epochs_pre; ++epoch) {
        shuffle(train_idx, rng);
        double epoch_loss = 0.0;
        long epoch_terms = 0;
        std::size_t pos = 0;
        while (pos < train_idx.size()) {
            NetworkParams g = zeros_like(p);
            double loss = 0.0;
            long terms = 0;
            std::size_t seqs = 0;
            while (pos < train_idx.size() && seqs < static_cast<std::size_t>(cfg.batch_pre)) {
                const std::size_t s = train_idx[pos++];
                const auto [l, t] = motion_sequence_loss(p, scenes[s], cfg.augment, rng, &g);
                loss += l;
                terms += t;
                seqs += std::max<std::size_t>(ntracks[s], 1);
            }
            if (terms == 0) continue;
            if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "pretrain_motion: non-finite loss");
            scale_grads(g, 1.0 / static_cast<double>(terms));
            std::vector<nn::TensorRef> gt;
            collect_motion(g, gt);
            nn::adam_step(params, gt, adam);
            epoch_loss += loss;
            epoch_terms += terms;
        }
        const double val = validation_motion_loss(p, scenes, val_idx, cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.log.push_back({epoch, epoch_terms > 0 ? epoch_loss / static_cast<double>(epoch_terms) : 0.0, val, val, 0.0,
                           0.0, secs});
        log::info("pretrain epoch " + std::to_string(epoch) + " val " + std::to_string(val));
        if (val < best) {
            best = val;
            out.params = p;
            out.best_epoch = epoch;
        }
    }
    return out;
}

FrameLosses frame_losses(const NetworkParams& p, const tracker::TrainingRecord& rec, const sim::Frame& frame,
                         const tracker::TrackerConfig& tcfg, const TrainConfig& cfg, NetworkParams* grads) {
    FrameLosses out;
    const auto ni = static_cast<Eigen::Index>(rec.predicted_means.size());
    const auto nj = static_cast<Eigen::Index>(frame.meas.size());
    const int ds = p.config.shape_dim;

    // Measurement-model terms.
    if (ni + nj > 0 && static_cast<Eigen::Index>(rec.measurements.size()) == nj &&
        static_cast<Eigen::Index>(rec.objects.size()) == ni) {
        const MatchLabels lab = label_frame(frame.gt, frame.meas, rec.predicted_means, cfg.gate);
        nn::MlpTape obj_tape, meas_tape;
        Mat obj_shape = ni > 0 ? nn::mlp_forward(p.shape_head, rec.object_roi, &obj_tape) : Mat(ds, 0);
        Mat meas_shape = nj > 0 ? nn::mlp_forward(p.shape_head, rec.meas_roi, &meas_tape) : Mat(ds, 0);
        for (Eigen::Index i = 0; i < ni; ++i) {
            if (rec.object_oor[static_cast<std::size_t>(i)]) obj_shape.col(i).setZero();
        }
        for (Eigen::Index j = 0; j < nj; ++j) {
            if (rec.meas_oor[static_cast<std::size_t>(j)]) meas_shape.col(j).setZero();
        }
        std::vector<measurement::ObjectFeatures> obj = rec.objects;
        std::vector<measurement::MeasurementFeatures> mf = rec.measurements;
        for (Eigen::Index i = 0; i < ni; ++i) obj[static_cast<std::size_t>(i)].shape = obj_shape.col(i);
        for (Eigen::Index j = 0; j < nj; ++j) mf[static_cast<std::size_t>(j)].shape = meas_shape.col(j);
        Mat d_obj_shape = Mat::Zero(ds, ni);
        Mat d_meas_shape = Mat::Zero(ds, nj);
        const bool use_af = tcfg.use_affinity && ni > 0 && nj > 0;
        const bool use_fpr = tcfg.use_fpr && nj > 0;

        if (use_af) {
            Mat x(measurement::affinity_input_dim(ds), ni * nj);
            for (Eigen::Index i = 0; i < ni; ++i) {
                for (Eigen::Index j = 0; j < nj; ++j) {
                    x.col(i * nj + j) = measurement::affinity_input(obj[static_cast<std::size_t>(i)], mf[static_cast<std::size_t>(j)]);
                }
            }
            nn::MlpTape tape;
            const Mat y = nn::mlp_forward(p.affinity, x, &tape);
            Mat f(ni, nj);
            for (Eigen::Index i = 0; i < ni; ++i) {
                for (Eigen::Index j = 0; j < nj; ++j) f(i, j) = std::exp(y(0, i * nj + j));
            }
            Mat dl;
            out.affinity = affinity_loss(f, lab.af_gt, grads ? &dl : nullptr);
            if (grads && cfg.w_meas > 0.0) {
                Mat dy(1, ni * nj);
                for (Eigen::Index i = 0; i < ni; ++i) {
                    for (Eigen::Index j = 0; j < nj; ++j) dy(0, i * nj + j) = cfg.w_meas * dl(i, j);
                }
                const Mat dx = nn::mlp_backward(p.affinity, tape, dy, grads->affinity);
                const int mo = measurement::affinity_meas_shape_offset(ds);
                for (Eigen::Index i = 0; i < ni; ++i) {
                    for (Eigen::Index j = 0; j < nj; ++j) {
                        d_obj_shape.col(i) += dx.block(measurement::kAffinityObjectShapeOffset, i * nj + j, ds, 1);
                        d_meas_shape.col(j) += dx.block(mo, i * nj + j, ds, 1);
                    }
                }
            }
        }
        if (use_fpr) {
            Mat x(measurement::fpr_input_dim(ds), nj);
            for (Eigen::Index j = 0; j < nj; ++j) x.col(j) = measurement::fpr_input(mf[static_cast<std::size_t>(j)]);
            nn::MlpTape tape;
            const Mat y = nn::mlp_forward(p.fpr, x, &tape);
            Vec f(nj);
            for (Eigen::Index j = 0; j < nj; ++j) f[j] = nn::sigmoid(y(0, j));
            Vec dl;
            out.fpr = fpr_loss(f, lab.fpr_gt, cfg.w_fpr, grads ? &dl : nullptr);
            if (grads && cfg.w_meas > 0.0) {
                const Mat dy = cfg.w_meas * dl.transpose();
                const Mat dx = nn::mlp_backward(p.fpr, tape, dy, grads->fpr);
                d_meas_shape += dx.middleRows(measurement::kFprShapeOffset, ds);
            }
        }
        if (grads && cfg.w_meas > 0.0 && (use_af || use_fpr)) {
            for (Eigen::Index i = 0; i < ni; ++i) {
                if (rec.object_oor[static_cast<std::size_t>(i)]) d_obj_shape.col(i).setZero();
            }
            for (Eigen::Index j = 0; j < nj; ++j) {
                if (rec.meas_oor[static_cast<std::size_t>(j)]) d_meas_shape.col(j).setZero();
            }
            if (ni > 0) (void)nn::mlp_backward(p.shape_head, obj_tape, d_obj_shape, grads->shape_head);
            if (nj > 0) (void)nn::mlp_backward(p.shape_head, meas_tape, d_meas_shape, grads->shape_head);
        }
    }

    // Motion term on confident legacy estimates.
    std::vector<Vec> est;
    std::vector<int> est_index;
    for (Eigen::Index i = 0; i < ni; ++i) {
        if (rec.posterior_existence[static_cast<std::size_t>(i)] >= tcfg.t_dec) {
            est.push_back(rec.posterior_means[static_cast<std::size_t>(i)]);
            est_index.push_back(static_cast<int>(i));
        }
    }
    std::vector<Vec> gt_states;
    for (const auto& g : frame.gt) gt_states.push_back(g.state);
    const MatchLabels ml = label_frame(frame.gt, {}, est, cfg.gate);
    out.motion_pairs = static_cast<long>(ml.motion_pairs.size());
    if (!ml.motion_pairs.empty()) {
        std::vector<Vec> grad;
        out.motion = motion_loss(est, gt_states, ml.motion_pairs, grads ? &grad : nullptr);
        if (grads && tracker::uses_neural_motion(tcfg.mode)) {
            for (const auto& [e, g] : ml.motion_pairs) {
                const auto i = static_cast<std::size_t>(est_index[static_cast<std::size_t>(e)]);
                motion::sp_predict_backward(rec.priors[i], rec.neighbors[i], p.motion, tcfg.ut, tcfg.strategy,
                                            grad[static_cast<std::size_t>(e)], grads->motion);
            }
        }
    }
    out.joint = joint_loss(out.motion, out.affinity + out.fpr, cfg.w_meas);
    return out;
}

tracker::TrackerConfig joint_tracker_config(const sim::ScenarioConfig& scenario, const TrainConfig& cfg) {
    tracker::TrackerConfig t = tracker::config_for(scenario);
    t.mode = tracker::Mode::Ne;
    t.particle_count = cfg.particle_count;
    t.strategy = cfg.strategy;
    t.record_training = true;
    return t;
}

namespace {

/// Runs the tracker over one scene; on_step sees every frame's losses and
/// may update the parameters in between steps.
FrameLosses run_training_scene(NetworkParams& p, const sim::Scene& scene, const TrainConfig& cfg, std::uint64_t seed,
                               const std::function<void(const FrameLosses&, NetworkParams*)>& on_step,
                               bool with_grads) {
    const tracker::TrackerConfig tcfg = joint_tracker_config(scene.config, cfg);
    tracker::TrackerState state;
    Rng rng(seed);
    FrameLosses sum;
    for (const auto& frame : scene.frames) {
        const auto r = tracker::step(state, frame.meas, &frame.map, tcfg, &p, rng);
        NetworkParams g;
        if (with_grads) g = zeros_like(p);
        const FrameLosses fl = frame_losses(p, *r.diag.training, frame, tcfg, cfg, with_grads ? &g : nullptr);
        if (!std::isfinite(fl.joint)) {
            throw Error(ErrorCode::NonFiniteLoss, "joint_train: non-finite loss at frame " + std::to_string(frame.k) +
                                                      " (motion " + std::to_string(fl.motion) + ", affinity " +
                                                      std::to_string(fl.affinity) + ", fpr " +
                                                      std::to_string(fl.fpr) + ")");
        }
        if (with_grads && !grads_finite(g)) {
            throw Error(ErrorCode::NonFiniteLoss, "joint_train: non-finite gradient at frame " + std::to_string(frame.k));
        }
        sum.motion += fl.motion;
        sum.affinity += fl.affinity;
        sum.fpr += fl.fpr;
        sum.joint += fl.joint;
        sum.motion_pairs += fl.motion_pairs;
        ++sum.frames;
        on_step(fl, with_grads ? &g : nullptr);
    }
    return sum;
}

}  // namespace

FrameLosses evaluate_joint(const NetworkParams& p, const std::vector<sim::Scene>& scenes, const TrainConfig& cfg) {
    NetworkParams q = p;
    FrameLosses total;
    long frames = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const FrameLosses f = run_training_scene(q, scenes[s], cfg, Rng(cfg.seed).split(0xE7A1u + s).next_u64(),
                                                 [](const FrameLosses&, NetworkParams*) {}, false);
        total.motion += f.motion;
        total.affinity += f.affinity;
        total.fpr += f.fpr;
        total.joint += f.joint;
        frames += f.frames;
    }
    if (frames > 0) {
        const double n = static_cast<double>(frames);
        total.motion /= n;
        total.affinity /= n;
        total.fpr /= n;
        total.joint /= n;
    }
    total.frames = frames;
    return total;
}

TrainResult joint_train(const std::vector<sim::Scene>& scenes, const NetworkParams& init, const TrainConfig& cfg) {
    validate(cfg);
    TrainResult out;
    out.params = init;
    NetworkParams p = init;
    std::vector<std::size_t> train_idx, val_idx;
    split_scenes(scenes.size(), cfg.val_fraction, train_idx, val_idx);
    if (val_idx.empty()) val_idx = train_idx;
    std::vector<sim::Scene> val_scenes;
    for (const std::size_t s : val_idx) val_scenes.push_back(scenes[s]);

    std::vector<nn::TensorRef> params;
    collect_all(p, params);
    nn::AdamState adam;
    adam.lr = cfg.lr_joint;
    Rng rng = Rng(cfg.seed).split(0x7017u);
    const auto t0 = std::chrono::steady_clock::now();

    auto val_log = [&](int epoch, double train_loss) {
        const FrameLosses v = evaluate_joint(p, val_scenes, cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.log.push_back({epoch, train_loss, v.joint, v.motion, v.affinity, v.fpr, secs});
        log::info("joint epoch " + std::to_string(epoch) + " val " + std::to_string(v.joint));
        return v.joint;
    };
    double best = val_log(0, 0.0);

    for (int epoch = 1; epoch <= cfg.epochs_joint; ++epoch) {
        shuffle(train_idx, rng);
        double loss_sum = 0.0;
        long frames = 0;
        NetworkParams acc = zeros_like(p);
        int pending = 0;
        for (const std::size_t s : train_idx) {
            const std::uint64_t seed = Rng(cfg.seed).split(0x5CE0u + s * 1000 + static_cast<std::uint64_t>(epoch)).next_u64();
            const FrameLosses f = run_training_scene(
                p, scenes[s], cfg, seed,
                [&](const FrameLosses&, NetworkParams* g) {
                    std::vector<nn::TensorRef> a, b;
                    collect_all(acc, a);
                    collect_all(*g, b);
                    for (std::size_t t = 0; t < a.size(); ++t) {
                        for (Eigen::Index k = 0; k < a[t].size(); ++k) a[t].data[k] += b[t].data[k];
                    }
                    if (++pending >= cfg.batch_joint) {
                        scale_grads(acc, 1.0 / pending);
                        std::vector<nn::TensorRef> ga;
                        collect_all(acc, ga);
                        nn::adam_step(params, ga, adam);
                        acc = zeros_like(p);
                        pending = 0;
                    }
                },
                true);
            loss_sum += f.joint;
            frames += f.frames;
        }
        const double v = val_log(epoch, frames > 0 ? loss_sum / static_cast<double>(frames) : 0.0);
        if (v < best) {
            best = v;
            out.params = p;
            out.best_epoch = epoch;
        }
    }
    return out;
}

std::string format_log(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch train_loss val_loss val_motion val_affinity val_fpr seconds\n";
    for (const auto& e : log) {
        os << e.epoch << ' ' << e.train_loss << ' ' << e.val_loss << ' ' << e.val_motion << ' ' << e.val_affinity
           << ' ' << e.val_fpr << ' ' << e.seconds << '\n';
    }
    return os.str();
}

}  // namespace bpmot::train
