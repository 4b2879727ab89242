#include "bpmot/evaluation.hpp"

#include "bpmot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

namespace bpmot::eval {
namespace {

/// Potentials-based O(n^2 m) assignment for n <= m; returns column of each row.
std::vector<int> assign_rows(const Mat& a) {
    const auto n = static_cast<int>(a.rows());
    const auto m = static_cast<int>(a.cols());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    std::vector<char> used(m + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col(n, -1);
    for (int j = 1; j <= m; ++j) {
        if (p[j] != 0) col[p[j] - 1] = j - 1;
    }
    return col;
}

Mat distance_matrix(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b) {
    Mat d(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (a[i] - b[j]).norm();
        }
    }
    return d;
}

struct Counts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long ids = 0;
    long gt = 0;
};

Counts counts_at(const std::vector<SceneTracks>& scenes, double threshold, double gate) {
    Counts c;
    for (const auto& s : scenes) {
        const MotReport r = clear_mot(*s.est, *s.gt, gate, threshold);
        c.tp += r.tp;
        c.fp += r.fp;
        c.fn += r.fn;
        c.ids += r.ids;
        c.gt += r.gt_count;
    }
    return c;
}

}  // namespace

Assignment hungarian(const Mat& cost) {
    Assignment out;
    if (cost.rows() == 0 || cost.cols() == 0) return out;
    if (!cost.allFinite()) throw Error(ErrorCode::DimensionMismatch, "hungarian: costs must be finite");
    if (cost.rows() <= cost.cols()) {
        const auto col = assign_rows(cost);
        for (std::size_t i = 0; i < col.size(); ++i) out.pairs.emplace_back(static_cast<int>(i), col[i]);
    } else {
        const auto row = assign_rows(cost.transpose());
        for (std::size_t j = 0; j < row.size(); ++j) out.pairs.emplace_back(row[j], static_cast<int>(j));
        std::sort(out.pairs.begin(), out.pairs.end());
    }
    for (const auto& [i, j] : out.pairs) out.cost += cost(i, j);
    return out;
}

std::vector<std::pair<int, int>> gated_match(const Mat& dist, double gate) {
    // Pairs beyond the gate get a cost exceeding any feasible total so that
    // the number of gated matches is maximized first.
    const double big = gate * static_cast<double>(std::min(dist.rows(), dist.cols()) + 1) + 1.0;
    const Mat c = dist.unaryExpr([&](double d) { return d <= gate ? d : big; });
    std::vector<std::pair<int, int>> out;
    for (const auto& pr : hungarian(c).pairs) {
        if (dist(pr.first, pr.second) <= gate) out.push_back(pr);
    }
    return out;
}

MotReport clear_mot(const tracker::TrackHistory& est, const GtHistory& gt, double gate, double min_confidence) {
    if (est.size() != gt.size()) throw Error(ErrorCode::SchemaMismatch, "clear_mot: frame counts differ");
    MotReport rep;
    std::unordered_map<int, int> current;   // gt id -> est id matched in the previous frame
    std::unordered_map<int, int> last;      // gt id -> most recent matched est id
    std::set<int> tracked_prev;             // gt ids matched in the previous frame
    double err_sum = 0.0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
        FrameScore fs;
        std::vector<const tracker::Estimate*> e;
        for (const auto& x : est[k]) {
            if (x.confidence() >= min_confidence) e.push_back(&x);
        }
        const auto& g = gt[k];
        std::vector<int> g_match(g.size(), -1);
        std::vector<char> e_used(e.size(), 0);
        auto dist = [&](std::size_t gi, std::size_t ei) {
            return (g[gi].state.head<2>() - e[ei]->state.head<2>()).norm();
        };
        for (std::size_t gi = 0; gi < g.size(); ++gi) {
            const auto it = current.find(g[gi].id);
            if (it == current.end()) continue;
            for (std::size_t ei = 0; ei < e.size(); ++ei) {
                if (!e_used[ei] && e[ei]->id == it->second && dist(gi, ei) <= gate) {
                    g_match[gi] = static_cast<int>(ei);
                    e_used[ei] = 1;
                    break;
                }
            }
        }
        std::vector<std::size_t> gf, ef;
        for (std::size_t gi = 0; gi < g.size(); ++gi) {
            if (g_match[gi] < 0) gf.push_back(gi);
        }
        for (std::size_t ei = 0; ei < e.size(); ++ei) {
            if (!e_used[ei]) ef.push_back(ei);
        }
        Mat d(static_cast<Eigen::Index>(gf.size()), static_cast<Eigen::Index>(ef.size()));
        for (std::size_t a = 0; a < gf.size(); ++a) {
            for (std::size_t b = 0; b < ef.size(); ++b) {
                d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = dist(gf[a], ef[b]);
            }
        }
        for (const auto& [a, b] : gated_match(d, gate)) {
            g_match[gf[static_cast<std::size_t>(a)]] = static_cast<int>(ef[static_cast<std::size_t>(b)]);
            e_used[ef[static_cast<std::size_t>(b)]] = 1;
        }

        std::unordered_map<int, int> next;
        std::set<int> tracked_now;
        for (std::size_t gi = 0; gi < g.size(); ++gi) {
            const int gid = g[gi].id;
            if (g_match[gi] < 0) {
                ++fs.fn;
                continue;
            }
            const auto* m = e[static_cast<std::size_t>(g_match[gi])];
            ++fs.tp;
            fs.errors.push_back(dist(gi, static_cast<std::size_t>(g_match[gi])));
            const auto lt = last.find(gid);
            if (lt != last.end()) {
                if (lt->second != m->id) ++fs.id_switches;
                if (!tracked_prev.contains(gid)) ++fs.fragmentations;
            }
            last[gid] = m->id;
            next[gid] = m->id;
            tracked_now.insert(gid);
        }
        fs.fp = static_cast<int>(e.size()) - fs.tp;
        current = std::move(next);
        tracked_prev = std::move(tracked_now);

        rep.tp += fs.tp;
        rep.fp += fs.fp;
        rep.fn += fs.fn;
        rep.ids += fs.id_switches;
        rep.frag += fs.fragmentations;
        rep.gt_count += static_cast<long>(g.size());
        for (const double x : fs.errors) err_sum += x;
        rep.frames.push_back(std::move(fs));
    }
    rep.defined = rep.gt_count > 0;
    rep.mota = rep.defined ? 1.0 - static_cast<double>(rep.fp + rep.fn + rep.ids) / static_cast<double>(rep.gt_count)
                           : std::numeric_limits<double>::quiet_NaN();
    rep.mean_error = rep.tp > 0 ? err_sum / static_cast<double>(rep.tp) : 0.0;
    return rep;
}

std::vector<double> default_recall_grid() {
    std::vector<double> r;
    for (int i = 1; i <= 10; ++i) r.push_back(i / 10.0);
    return r;
}

AmotaReport amota_variant(const std::vector<SceneTracks>& scenes, const std::vector<double>& recalls, double gate) {
    AmotaReport rep;
    std::vector<double> conf;
    long total_gt = 0;
    for (const auto& s : scenes) {
        for (const auto& f : *s.est) {
            for (const auto& e : f) conf.push_back(e.confidence());
        }
        for (const auto& f : *s.gt) total_gt += static_cast<long>(f.size());
    }
    std::sort(conf.begin(), conf.end(), std::greater<>());
    conf.erase(std::unique(conf.begin(), conf.end()), conf.end());

    // Recall at the k-th highest distinct confidence, cached.
    std::unordered_map<std::size_t, Counts> cache;
    auto at = [&](std::size_t idx) -> const Counts& {
        auto it = cache.find(idx);
        if (it == cache.end()) it = cache.emplace(idx, counts_at(scenes, conf[idx], gate)).first;
        return it->second;
    };
    auto recall_of = [&](const Counts& c) {
        return total_gt > 0 ? static_cast<double>(c.tp) / static_cast<double>(total_gt) : 0.0;
    };

    double sum = 0.0;
    int achieved = 0;
    for (const double r : recalls) {
        RecallRow row;
        row.target = r;
        if (total_gt > 0 && !conf.empty() && recall_of(at(conf.size() - 1)) + 1e-12 >= r) {
            // Highest threshold whose recall reaches the target.
            std::size_t lo = 0;
            std::size_t hi = conf.size() - 1;
            while (lo < hi) {
                const std::size_t mid = (lo + hi) / 2;
                if (recall_of(at(mid)) + 1e-12 >= r) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            const Counts& c = at(lo);
            row.achieved = true;
            row.threshold = conf[lo];
            row.recall = recall_of(c);
            row.tp = c.tp;
            row.fp = c.fp;
            row.fn = c.fn;
            row.ids = c.ids;
            const double p = static_cast<double>(total_gt);
            const double num = static_cast<double>(c.ids + c.fp + c.fn) - (1.0 - r) * p;
            row.motar = std::clamp(1.0 - num / (r * p), 0.0, 1.0);
            sum += row.motar;
            ++achieved;
        }
        rep.rows.push_back(row);
    }
    rep.amota = achieved == 0 ? 0.0 : sum / achieved;
    return rep;
}

AmotaReport amota_variant(const tracker::TrackHistory& est, const GtHistory& gt, const std::vector<double>& recalls,
                          double gate) {
    return amota_variant(std::vector<SceneTracks>{{&est, &gt}}, recalls, gate);
}

GtHistory ground_truth(const sim::Scene& scene) {
    GtHistory out;
    for (const auto& f : scene.frames) out.push_back(f.gt);
    return out;
}

std::vector<NoisyTrack> noisy_tracks(const sim::Scene& scene, double gate) {
    std::vector<NoisyTrack> tracks;
    std::unordered_map<int, std::size_t> index;
    for (std::size_t k = 0; k < scene.frames.size(); ++k) {
        const auto& f = scene.frames[k];
        std::vector<Eigen::Vector2d> gp, mp;
        for (const auto& g : f.gt) gp.emplace_back(g.state[0], g.state[1]);
        for (const auto& m : f.meas) mp.emplace_back(m.z[0], m.z[1]);
        const auto pairs = gated_match(distance_matrix(gp, mp), gate);
        std::vector<int> matched(f.gt.size(), -1);
        for (const auto& [gi, mj] : pairs) matched[static_cast<std::size_t>(gi)] = mj;
        for (std::size_t gi = 0; gi < f.gt.size(); ++gi) {
            const auto& g = f.gt[gi];
            auto it = index.find(g.id);
            if (it == index.end()) {
                NoisyTrack t;
                t.gt_id = g.id;
                t.class_id = g.class_id;
                t.first_frame = static_cast<int>(k);
                it = index.emplace(g.id, tracks.size()).first;
                tracks.push_back(std::move(t));
            }
            NoisyTrack& t = tracks[it->second];
            t.gt.push_back(g.state);
            if (matched[gi] >= 0) {
                t.meas.emplace_back(f.meas[static_cast<std::size_t>(matched[gi])].z);
            } else {
                t.meas.emplace_back(std::nullopt);
            }
        }
    }
    return tracks;
}

PredictionMse prediction_mse(const std::vector<std::vector<NoisyTrack>>& scenes, const motion::MotionParams* params,
                             double dt) {
    PredictionMse out;
    std::map<int, double> sums;
    const Mat f = motion::cv_transition(dt);
    for (const auto& tracks : scenes) {
        int last_frame = 0;
        for (const auto& t : tracks) last_frame = std::max(last_frame, t.first_frame + static_cast<int>(t.gt.size()));
        const std::size_t n = tracks.size();
        std::vector<std::optional<Vec>> input(n);   // input state at the current frame
        std::vector<Vec> hidden(n);
        std::vector<Eigen::Vector2d> origin(n);
        std::vector<Vec> pred(n);                     // prediction for the current frame
        std::vector<bool> started(n, false);
        for (int k = 0; k < last_frame; ++k) {
            std::vector<std::size_t> active;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& t = tracks[i];
                const int off = k - t.first_frame;
                input[i].reset();
                if (off < 0 || off >= static_cast<int>(t.gt.size())) continue;
                const auto& m = t.meas[static_cast<std::size_t>(off)];
                if (m) {
                    if (!started[i]) {
                        started[i] = true;
                        origin[i] = m->head<2>() - dt * m->segment<2>(2);
                        if (params) hidden[i] = Vec::Zero(params->hidden_dim);
                    }
                    input[i] = *m;
                } else if (started[i]) {
                    input[i] = pred[i];
                }
                if (input[i] && off + 1 < static_cast<int>(t.gt.size())) active.push_back(i);
            }
            if (active.empty()) continue;
            Mat next(motion::kStateDim, static_cast<Eigen::Index>(active.size()));
            if (params == nullptr) {
                for (std::size_t a = 0; a < active.size(); ++a) next.col(static_cast<Eigen::Index>(a)) = f * *input[active[a]];
            } else {
                motion::MotionBatch b;
                const auto na = static_cast<Eigen::Index>(active.size());
                b.x.resize(motion::kStateDim, na);
                b.h.resize(params->hidden_dim, na);
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
                    const std::size_t mk = std::min(cand.size(), static_cast<std::size_t>(params->max_neighbors));
                    for (std::size_t c = 0; c < mk; ++c) nbr_cols.push_back(*input[cand[c].second]);
                    b.nbr_begin.push_back(static_cast<Eigen::Index>(nbr_cols.size()));
                }
                b.nbr.resize(motion::kStateDim, static_cast<Eigen::Index>(nbr_cols.size()));
                for (std::size_t c = 0; c < nbr_cols.size(); ++c) b.nbr.col(static_cast<Eigen::Index>(c)) = nbr_cols[c];
                const auto res = motion::motion_forward_batch(*params, b);
                next = res.x_next;
                for (Eigen::Index a = 0; a < na; ++a) hidden[active[static_cast<std::size_t>(a)]] = res.h_next.col(a);
            }
            for (std::size_t a = 0; a < active.size(); ++a) {
                const std::size_t i = active[a];
                const auto& t = tracks[i];
                const int off = k - t.first_frame;
                pred[i] = next.col(static_cast<Eigen::Index>(a));
                origin[i] = input[i]->head<2>();
                const Vec& g = t.gt[static_cast<std::size_t>(off + 1)];
                const double se = (pred[i].head<2>() - g.head<2>()).squaredNorm();
                sums[t.class_id] += se;
                ++out.count[t.class_id];
                out.overall += se;
                ++out.total;
            }
        }
    }
    for (const auto& [c, s] : sums) out.per_class[c] = s / static_cast<double>(out.count[c]);
    if (out.total > 0) out.overall /= static_cast<double>(out.total);
    return out;
}

}  // namespace bpmot::eval
