#include "bpmot/cli.hpp"

#include "bpmot/config.hpp"
#include "bpmot/errors.hpp"
#include "bpmot/evaluation.hpp"
#include "bpmot/io.hpp"
#include "bpmot/model.hpp"
#include "bpmot/simulator.hpp"
#include "bpmot/tracker.hpp"
#include "bpmot/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace bpmot::cli {
namespace {

using Json = nlohmann::json;

config::RunConfig load_config(const std::string& path) {
    return path.empty() ? config::parse_run_config(Json::object()) : config::load_run_config(path);
}

std::vector<sim::Scene> load_scene_dir(const std::string& dir) {
    std::vector<std::string> files;
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path().string());
    }
    if (ec) throw Error(ErrorCode::IoError, "cannot list " + dir + ": " + ec.message());
    if (files.empty()) throw Error(ErrorCode::IoError, "no scene files in " + dir);
    std::sort(files.begin(), files.end());
    std::vector<sim::Scene> scenes;
    for (const auto& f : files) scenes.push_back(io::read_scene(f));
    return scenes;
}

int cmd_simulate(const std::string& config_path, const std::optional<std::uint64_t>& seed, const std::string& out_path) {
    const auto run = load_config(config_path);
    const std::uint64_t s = seed.value_or(run.seed);
    const sim::Scene scene = sim::simulate_scene(run.scenario, s);
    io::write_scene(scene, out_path);
    return 0;
}

int cmd_track(const std::string& scene_path, const std::string& weights, const std::string& mode,
              const std::string& out_path, const std::string& config_path, std::uint64_t seed,
              const std::string& strategy) {
    const auto run = load_config(config_path);
    const sim::Scene scene = io::read_scene(scene_path);
    tracker::TrackerConfig cfg = config::tracker_config(run, scene.config);
    cfg.mode = tracker::mode_from_name(mode);
    if (!strategy.empty()) cfg.strategy = motion::strategy_from_name(strategy);
    std::optional<NetworkParams> net;
    if (cfg.mode != tracker::Mode::Mb) {
        if (weights.empty()) {
            throw Error(ErrorCode::MissingWeights, std::string("mode ") + mode + " requires --weights");
        }
        net = load_weights(weights);
        if (net->config.descriptor_dim != scene.config.descriptor_dim) {
            throw Error(ErrorCode::ShapeMismatch, "weights descriptor_dim does not match the scene feature maps");
        }
    }
    const auto result = tracker::run_scene(scene, cfg, net ? &*net : nullptr, seed);
    io::TracksFile tf;
    tf.mode = mode;
    tf.seed = seed;
    tf.scene = std::filesystem::path(scene_path).filename().string();
    tf.frames = result.tracks;
    io::write_tracks(tf, out_path);
    return 0;
}

int cmd_train(const std::string& scenes_dir, const std::string& out_path, const std::string& stage,
              const std::string& config_path, const std::string& init_path, const std::optional<std::uint64_t>& seed) {
    if (stage != "pretrain" && stage != "joint") throw Error(ErrorCode::Usage, "--stage must be pretrain or joint");
    if (stage == "joint" && init_path.empty()) throw Error(ErrorCode::Usage, "--stage joint requires --init weights");
    auto run = load_config(config_path);
    if (seed) {
        run.seed = *seed;
        run.train.seed = *seed;
    }
    const auto scenes = load_scene_dir(scenes_dir);
    NetworkParams init;
    if (!init_path.empty()) {
        init = load_weights(init_path);
    } else {
        NetworkConfig nc = run.network;
        nc.descriptor_dim = scenes.front().config.descriptor_dim;
        nc.dt = scenes.front().config.dt;
        Rng rng = Rng(run.seed).split(0x1417u);
        init = make_network(nc, rng);
    }
    for (const auto& s : scenes) {
        if (s.config.descriptor_dim != init.config.descriptor_dim) {
            throw Error(ErrorCode::ShapeMismatch, "scene descriptor_dim does not match the network");
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const train::TrainResult res =
        stage == "pretrain" ? train::pretrain_motion(scenes, init, run.train) : train::joint_train(scenes, init, run.train);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_weights(res.params, out_path);
    std::ostringstream log;
    log << "# stage " << stage << " scenes " << scenes.size() << " best_epoch " << res.best_epoch << "\n";
    // Per-epoch wall time goes to the timing file so the log stays reproducible.
    std::vector<train::EpochLog> stable = res.log;
    std::ostringstream timing;
    timing << "epoch seconds\n";
    for (auto& e : stable) {
        timing << e.epoch << ' ' << e.seconds << '\n';
        e.seconds = 0.0;
    }
    timing << "total " << secs << '\n';
    std::string table = train::format_log(stable);
    log << table;
    io::write_text(out_path + ".log", log.str());
    io::write_text(out_path + ".timing", timing.str());
    return 0;
}

Json report_json(const eval::MotReport& mot, const eval::AmotaReport& am) {
    Json rows = Json::array();
    for (const auto& r : am.rows) {
        rows.push_back({{"target_recall", r.target},
                        {"achieved", r.achieved},
                        {"threshold", r.threshold},
                        {"recall", r.recall},
                        {"tp", r.tp},
                        {"fp", r.fp},
                        {"fn", r.fn},
                        {"ids", r.ids},
                        {"motar", r.motar}});
    }
    Json j{{"version", 1},
           {"mota", mot.defined ? Json(mot.mota) : Json(nullptr)},
           {"tp", mot.tp},
           {"fp", mot.fp},
           {"fn", mot.fn},
           {"ids", mot.ids},
           {"frag", mot.frag},
           {"gt_count", mot.gt_count},
           {"mean_position_error", mot.mean_error},
           {"amota_variant", am.amota},
           {"confidence_rule", "existence*score (surrogate score fusion)"},
           {"recall_table", rows}};
    return j;
}

std::string report_text(const eval::MotReport& mot, const eval::AmotaReport& am) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "metric               value\n";
    if (mot.defined) {
        os << "MOTA                 " << mot.mota << "\n";
    } else {
        os << "MOTA                 undefined (no ground truth)\n";
    }
    os << "AMOTA (variant)      " << am.amota << "\n";
    os << "IDS                  " << mot.ids << "\n";
    os << "Frag                 " << mot.frag << "\n";
    os << "TP                   " << mot.tp << "\n";
    os << "FP                   " << mot.fp << "\n";
    os << "FN                   " << mot.fn << "\n";
    os << "mean position error  " << mot.mean_error << "\n";
    os << "confidence           existence*score (surrogate)\n";
    os << "\nrecall  achieved  threshold  MOTAR\n";
    for (const auto& r : am.rows) {
        os << r.target << "  " << (r.achieved ? "yes" : "no ") << "       " << r.threshold << "     " << r.motar << "\n";
    }
    return os.str();
}

int cmd_eval(const std::string& tracks_path, const std::string& scene_path, const std::string& report_path,
             std::ostream& out) {
    const auto tracks = io::read_tracks(tracks_path);
    const auto scene = io::read_scene(scene_path);
    const auto gt = eval::ground_truth(scene);
    if (tracks.frames.size() != gt.size()) throw Error(ErrorCode::SchemaMismatch, "tracks and scene frame counts differ");
    const auto mot = eval::clear_mot(tracks.frames, gt);
    const auto am = eval::amota_variant(tracks.frames, gt);
    const std::string text = report_text(mot, am);
    out << text;
    if (!report_path.empty()) {
        io::write_text(report_path, report_json(mot, am).dump(1) + "\n");
        io::write_text(report_path + ".txt", text);
    }
    return 0;
}

std::string svg_plot(const sim::Scene& scene, const tracker::TrackHistory& tracks) {
    const auto& r = scene.config.region;
    const double w = 800.0;
    const double s = w / (r.xmax - r.xmin);
    const double h = s * (r.ymax - r.ymin);
    auto px = [&](double x) { return (x - r.xmin) * s; };
    auto py = [&](double y) { return h - (y - r.ymin) * s; };
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
       << ' ' << h << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\" stroke=\"black\"/>\n";
    auto polylines = [&](const std::map<int, std::vector<Eigen::Vector2d>>& paths, const char* style) {
        for (const auto& [id, pts] : paths) {
            os << "<polyline data-id=\"" << id << "\" " << style << " points=\"";
            for (const auto& p : pts) os << px(p.x()) << ',' << py(p.y()) << ' ';
            os << "\"/>\n";
        }
    };
    auto box = [&](const Eigen::Vector2d& c, const measurement::Box& b, const char* style) {
        const double deg = -b.yaw * 180.0 / 3.141592653589793;
        os << "<rect x=\"" << px(c.x()) - 0.5 * b.length * s << "\" y=\"" << py(c.y()) - 0.5 * b.width * s
           << "\" width=\"" << b.length * s << "\" height=\"" << b.width * s << "\" transform=\"rotate(" << deg << ' '
           << px(c.x()) << ' ' << py(c.y()) << ")\" " << style << "/>\n";
    };
    std::map<int, std::vector<Eigen::Vector2d>> gt_paths, est_paths;
    for (const auto& f : scene.frames) {
        for (const auto& g : f.gt) gt_paths[g.id].emplace_back(g.state[0], g.state[1]);
    }
    for (const auto& f : tracks) {
        for (const auto& e : f) est_paths[e.id].emplace_back(e.state[0], e.state[1]);
    }
    os << "<g id=\"ground-truth\">\n";
    polylines(gt_paths, "fill=\"none\" stroke=\"green\" stroke-width=\"1.5\"");
    if (!scene.frames.empty()) {
        for (const auto& g : scene.frames.back().gt) {
            box({g.state[0], g.state[1]}, g.box, "fill=\"none\" stroke=\"green\" stroke-width=\"1.5\"");
        }
    }
    os << "</g>\n<g id=\"estimates\">\n";
    polylines(est_paths, "fill=\"none\" stroke=\"orange\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"");
    if (!tracks.empty()) {
        for (const auto& e : tracks.back()) {
            box({e.state[0], e.state[1]}, e.box,
                "fill=\"none\" stroke=\"orange\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"");
        }
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

std::string csv_curves(const sim::Scene& scene, const tracker::TrackHistory& tracks) {
    const auto gt = eval::ground_truth(scene);
    const auto mot = eval::clear_mot(tracks, gt);
    std::ostringstream os;
    os << std::setprecision(10);
    os << kCurveCsvHeader << "\n";
    for (std::size_t k = 0; k < gt.size(); ++k) {
        const auto& f = mot.frames[k];
        double err = 0.0;
        for (const double e : f.errors) err += e;
        if (!f.errors.empty()) err /= static_cast<double>(f.errors.size());
        os << k << ',' << gt[k].size() << ',' << tracks[k].size() << ',' << f.tp << ',' << f.fp << ',' << f.fn << ','
           << f.id_switches << ',' << err << "\n";
    }
    return os.str();
}

int cmd_plot(const std::string& in_path, const std::string& scene_path, const std::string& out_path) {
    const auto tracks = io::read_tracks(in_path);
    const auto scene = io::read_scene(scene_path);
    if (tracks.frames.size() != scene.frames.size()) {
        throw Error(ErrorCode::SchemaMismatch, "tracks and scene frame counts differ");
    }
    const std::string ext = std::filesystem::path(out_path).extension().string();
    if (ext == ".svg") {
        io::write_text(out_path, svg_plot(scene, tracks.frames));
    } else if (ext == ".csv") {
        io::write_text(out_path, csv_curves(scene, tracks.frames));
    } else {
        throw Error(ErrorCode::Usage, "--out must end in .svg or .csv");
    }
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bayesian multiobject tracking with neural enhancements"};
    app.require_subcommand(1);

    std::string config_path, out_path, scene_path, weights, mode = "mb", strategy, scenes_dir, stage, init_path,
                                                            tracks_path, report_path, in_path;
    std::optional<std::uint64_t> seed;
    std::uint64_t track_seed = 1;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic scene");
    sim->add_option("--config", config_path, "run config (JSON)");
    sim->add_option("--seed", seed, "scene seed (defaults to the config seed)");
    sim->add_option("--out", out_path, "scene file")->required();

    auto* trk = app.add_subcommand("track", "run the tracker over a scene");
    trk->add_option("--scene", scene_path, "scene file")->required();
    trk->add_option("--weights", weights, "network weights (required for ne modes)");
    trk->add_option("--mode", mode, "mb|ne|ne-motion|ne-meas");
    trk->add_option("--strategy", strategy, "mean-only|object-sp|joint-sp");
    trk->add_option("--config", config_path, "run config (JSON)");
    trk->add_option("--seed", track_seed, "tracker seed");
    trk->add_option("--out", out_path, "tracks file")->required();

    auto* trn = app.add_subcommand("train", "train network weights");
    trn->add_option("--scenes", scenes_dir, "directory of scene files")->required();
    trn->add_option("--out", out_path, "weights file")->required();
    trn->add_option("--stage", stage, "pretrain|joint")->required();
    trn->add_option("--config", config_path, "run config (JSON)");
    trn->add_option("--init", init_path, "initial weights (required for joint)");
    trn->add_option("--seed", seed, "training seed");

    auto* evl = app.add_subcommand("eval", "score tracks against ground truth");
    evl->add_option("--tracks", tracks_path, "tracks file")->required();
    evl->add_option("--scene", scene_path, "scene file")->required();
    evl->add_option("--report", report_path, "JSON report path (text copy at <report>.txt)");

    auto* plt = app.add_subcommand("plot", "render tracks as SVG or per-frame CSV curves");
    plt->add_option("--in", in_path, "tracks file")->required();
    plt->add_option("--scene", scene_path, "scene file")->required();
    plt->add_option("--out", out_path, "output .svg or .csv")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "usage error: " << e.what() << "\n";
        return exit_code_for(ErrorCode::Usage);
    }

    try {
        if (*sim) return cmd_simulate(config_path, seed, out_path);
        if (*trk) return cmd_track(scene_path, weights, mode, out_path, config_path, track_seed, strategy);
        if (*trn) return cmd_train(scenes_dir, out_path, stage, config_path, init_path, seed);
        if (*evl) return cmd_eval(tracks_path, scene_path, report_path, out);
        if (*plt) return cmd_plot(in_path, scene_path, out_path);
    } catch (const Error& e) {
        err << error_name(e.code()) << ": " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

}  // namespace bpmot::cli
