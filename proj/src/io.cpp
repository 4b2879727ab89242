#include "bpmot/io.hpp"

#include "bpmot/config.hpp"
#include "bpmot/errors.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace bpmot::io {
namespace {

using Json = nlohmann::json;

constexpr char kMapMagic[4] = {'B', 'P', 'F', 'M'};

std::vector<double> to_vector(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec vec_of(const Json& j, Eigen::Index n, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
        throw Error(ErrorCode::SchemaMismatch, what + " must be an array of " + std::to_string(n));
    }
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

Json box_json(const measurement::Box& b) { return Json::array({b.length, b.width, b.yaw}); }

measurement::Box box_of(const Json& j) {
    const Vec v = vec_of(j, 3, "box");
    return {v[0], v[1], v[2]};
}

Json parse_file(const std::string& path) {
    const std::string text = read_text(path);
    try {
        return Json::parse(text);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, path + ": " + e.what());
    }
}

void check_version(const Json& j, int supported, const std::string& what) {
    if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer()) {
        throw Error(ErrorCode::SchemaMismatch, what + ": missing version field");
    }
    const int v = j["version"].get<int>();
    if (v > supported) {
        throw Error(ErrorCode::FormatVersionMismatch,
                    what + ": format version " + std::to_string(v) + " is newer than supported " +
                        std::to_string(supported));
    }
}

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error(ErrorCode::FormatVersionMismatch, path + ": truncated feature-map file");
    return v;
}

}  // namespace

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
    os << text;
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_scene(const sim::Scene& scene, const std::string& path) {
    const std::string map_path = path + ".fmap";
    Json frames = Json::array();
    for (const auto& f : scene.frames) {
        Json gt = Json::array();
        for (const auto& g : f.gt) {
            gt.push_back({{"id", g.id}, {"state", to_vector(g.state)}, {"box", box_json(g.box)}, {"class", g.class_id}});
        }
        Json meas = Json::array();
        for (std::size_t j = 0; j < f.meas.size(); ++j) {
            const auto& m = f.meas[j];
            meas.push_back({{"z", to_vector(m.z)},
                            {"score", m.score},
                            {"box", box_json(m.box)},
                            {"class", m.class_id},
                            {"source", j < f.meas_source.size() ? f.meas_source[j] : sim::kClutter}});
        }
        frames.push_back({{"k", f.k}, {"gt", gt}, {"meas", meas}, {"feature_map", f.k}});
    }
    const Json doc{{"version", kSceneVersion},
                   {"seed", scene.seed},
                   {"config", config::scenario_to_json(scene.config)},
                   {"feature_maps", std::filesystem::path(map_path).filename().string()},
                   {"frames", frames}};
    write_text(path, doc.dump(1) + "\n");

    std::ofstream os(map_path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + map_path);
    os.write(kMapMagic, 4);
    const int g = scene.config.grid_size;
    const int d = scene.config.descriptor_dim;
    put<std::uint32_t>(os, kFeatureMapVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(scene.frames.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (const auto& f : scene.frames) {
        if (f.map.rows != g || f.map.cols != g || f.map.depth != d) {
            throw Error(ErrorCode::SchemaMismatch, "write_scene: feature map dims differ from the config");
        }
        os.write(reinterpret_cast<const char*>(f.map.data.data()),
                 static_cast<std::streamsize>(f.map.data.size() * sizeof(float)));
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + map_path);
}

sim::Scene read_scene(const std::string& path) {
    const Json doc = parse_file(path);
    check_version(doc, kSceneVersion, path);
    sim::Scene scene;
    try {
        scene.seed = doc.at("seed").get<std::uint64_t>();
        scene.config = config::scenario_from_json(doc.at("config"));
        for (const auto& jf : doc.at("frames")) {
            sim::Frame f;
            f.k = jf.at("k").get<int>();
            for (const auto& jg : jf.at("gt")) {
                sim::GtObject g;
                g.id = jg.at("id").get<int>();
                g.state = vec_of(jg.at("state"), 4, "gt.state");
                g.box = box_of(jg.at("box"));
                g.class_id = jg.at("class").get<int>();
                f.gt.push_back(std::move(g));
            }
            for (const auto& jm : jf.at("meas")) {
                measurement::Measurement m;
                m.z = vec_of(jm.at("z"), 4, "meas.z");
                m.score = jm.at("score").get<double>();
                m.box = box_of(jm.at("box"));
                m.class_id = jm.at("class").get<int>();
                f.meas.push_back(std::move(m));
                f.meas_source.push_back(jm.at("source").get<int>());
            }
            scene.frames.push_back(std::move(f));
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, path + ": " + e.what());
    }

    const auto map_path =
        (std::filesystem::path(path).parent_path() / doc.at("feature_maps").get<std::string>()).string();
    std::ifstream is(map_path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + map_path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMapMagic, 4) != 0) {
        throw Error(ErrorCode::FormatVersionMismatch, map_path + ": not a feature-map file");
    }
    const auto version = get<std::uint32_t>(is, map_path);
    if (version > static_cast<std::uint32_t>(kFeatureMapVersion)) {
        throw Error(ErrorCode::FormatVersionMismatch, map_path + ": newer feature-map version");
    }
    const auto n = get<std::uint32_t>(is, map_path);
    const auto rows = static_cast<int>(get<std::uint32_t>(is, map_path));
    const auto cols = static_cast<int>(get<std::uint32_t>(is, map_path));
    const auto depth = static_cast<int>(get<std::uint32_t>(is, map_path));
    if (n != scene.frames.size()) throw Error(ErrorCode::SchemaMismatch, map_path + ": frame count differs");
    for (auto& f : scene.frames) {
        f.map = sim::FeatureMap(rows, cols, depth);
        is.read(reinterpret_cast<char*>(f.map.data.data()),
                static_cast<std::streamsize>(f.map.data.size() * sizeof(float)));
        if (!is) throw Error(ErrorCode::FormatVersionMismatch, map_path + ": truncated feature-map file");
    }
    return scene;
}

void write_tracks(const TracksFile& t, const std::string& path) {
    Json frames = Json::array();
    for (std::size_t k = 0; k < t.frames.size(); ++k) {
        Json tracks = Json::array();
        for (const auto& e : t.frames[k]) {
            tracks.push_back({{"id", e.id},
                              {"state", to_vector(e.state)},
                              {"existence", e.existence},
                              {"score", e.score},
                              {"box", box_json(e.box)},
                              {"class", e.class_id}});
        }
        frames.push_back({{"k", k}, {"tracks", tracks}});
    }
    const Json doc{{"version", kTracksVersion},
                   {"mode", t.mode},
                   {"seed", t.seed},
                   {"scene", t.scene},
                   {"confidence", "existence*score"},
                   {"frames", frames}};
    write_text(path, doc.dump(1) + "\n");
}

TracksFile read_tracks(const std::string& path) {
    const Json doc = parse_file(path);
    check_version(doc, kTracksVersion, path);
    TracksFile t;
    try {
        t.mode = doc.at("mode").get<std::string>();
        t.seed = doc.at("seed").get<std::uint64_t>();
        t.scene = doc.at("scene").get<std::string>();
        for (const auto& jf : doc.at("frames")) {
            std::vector<tracker::Estimate> frame;
            for (const auto& je : jf.at("tracks")) {
                tracker::Estimate e;
                e.id = je.at("id").get<int>();
                e.state = vec_of(je.at("state"), 4, "track.state");
                e.existence = je.at("existence").get<double>();
                e.score = je.at("score").get<double>();
                e.box = box_of(je.at("box"));
                e.class_id = je.at("class").get<int>();
                frame.push_back(std::move(e));
            }
            t.frames.push_back(std::move(frame));
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, path + ": " + e.what());
    }
    return t;
}

}  // namespace bpmot::io
