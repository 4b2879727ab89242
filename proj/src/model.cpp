#include "bpmot/model.hpp"

#include "bpmot/errors.hpp"
#include "bpmot/measurement.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>

namespace bpmot {

using nn::Activation;

NetworkParams make_network(const NetworkConfig& cfg, Rng& rng) {
    NetworkParams p;
    p.config = cfg;
    p.motion = motion::make_motion_params(cfg.hidden_dim, cfg.max_neighbors, cfg.frame, cfg.dt, rng);
    p.motion.pos_scale = cfg.pos_scale;
    p.motion.vel_scale = cfg.vel_scale;
    p.motion.nbr_scale = cfg.nbr_scale;
    if (cfg.frame == motion::MotionFrame::Local) {
        // Residual decoder starts at the CV transition.
        p.motion.decoder.layers.back().weight.setZero();
        p.motion.decoder.layers.back().bias.setZero();
    }
    const int h = cfg.factor_hidden;
    p.affinity = nn::make_mlp({measurement::affinity_input_dim(cfg.shape_dim), h, h, 1}, Activation::Relu,
                              Activation::Identity, rng);
    p.fpr = nn::make_mlp({measurement::fpr_input_dim(cfg.shape_dim), h, h, 1}, Activation::Relu,
                         Activation::Identity, rng);
    p.shape_head = nn::make_mlp({5 * cfg.descriptor_dim, 2 * cfg.shape_dim, cfg.shape_dim}, Activation::Relu,
                                Activation::Tanh, rng);
    return p;
}

NetworkParams zeros_like(const NetworkParams& p) {
    NetworkParams z = p;
    z.motion = motion::zeros_like(p.motion);
    z.affinity = nn::zeros_like(p.affinity);
    z.fpr = nn::zeros_like(p.fpr);
    z.shape_head = nn::zeros_like(p.shape_head);
    return z;
}

void neutralize_factors(NetworkParams& p) {
    p.affinity.layers.back().weight.setZero();
    p.affinity.layers.back().bias.setZero();
    p.fpr.layers.back().weight.setZero();
    p.fpr.layers.back().bias.setConstant(37.0);
}

void collect_motion(NetworkParams& p, std::vector<nn::TensorRef>& out) { motion::collect(p.motion, "motion", out); }

void collect_measurement(NetworkParams& p, std::vector<nn::TensorRef>& out) {
    nn::collect(p.affinity, "affinity", out);
    nn::collect(p.fpr, "fpr", out);
    nn::collect(p.shape_head, "shape_head", out);
}

void collect_all(NetworkParams& p, std::vector<nn::TensorRef>& out) {
    collect_motion(p, out);
    collect_measurement(p, out);
}

std::string network_config_json(const NetworkConfig& c) {
    nlohmann::json j;
    j["hidden_dim"] = c.hidden_dim;
    j["max_neighbors"] = c.max_neighbors;
    j["state_dim"] = c.state_dim;
    j["descriptor_dim"] = c.descriptor_dim;
    j["shape_dim"] = c.shape_dim;
    j["factor_hidden"] = c.factor_hidden;
    j["frame"] = c.frame == motion::MotionFrame::Local ? "local" : "absolute";
    j["dt"] = c.dt;
    j["pos_scale"] = c.pos_scale;
    j["vel_scale"] = c.vel_scale;
    j["nbr_scale"] = c.nbr_scale;
    j["affinity_floor"] = c.affinity_floor;
    return j.dump();
}

NetworkConfig network_config_from_json(const std::string& text) {
    NetworkConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.hidden_dim = j.at("hidden_dim").get<int>();
        c.max_neighbors = j.at("max_neighbors").get<int>();
        c.state_dim = j.at("state_dim").get<int>();
        c.descriptor_dim = j.at("descriptor_dim").get<int>();
        c.shape_dim = j.at("shape_dim").get<int>();
        c.factor_hidden = j.at("factor_hidden").get<int>();
        c.frame = j.at("frame").get<std::string>() == "local" ? motion::MotionFrame::Local
                                                              : motion::MotionFrame::Absolute;
        c.dt = j.at("dt").get<double>();
        c.pos_scale = j.at("pos_scale").get<double>();
        c.vel_scale = j.at("vel_scale").get<double>();
        c.nbr_scale = j.at("nbr_scale").get<double>();
        c.affinity_floor = j.at("affinity_floor").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::FormatVersionMismatch, std::string("weights config unreadable: ") + e.what());
    }
    return c;
}

namespace {

constexpr char kMagic[4] = {'B', 'P', 'M', 'W'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error(ErrorCode::FormatVersionMismatch, "weights file truncated");
    return v;
}

std::string read_string(std::istream& is, std::uint32_t len) {
    if (len > (1u << 24)) throw Error(ErrorCode::FormatVersionMismatch, "weights file corrupt");
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw Error(ErrorCode::FormatVersionMismatch, "weights file truncated");
    return s;
}

}  // namespace

void save_weights(const NetworkParams& params, const std::string& path) {
    NetworkParams p = params;
    std::vector<nn::TensorRef> tensors;
    collect_all(p, tensors);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoError, "cannot write weights: " + path);
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kWeightsVersion);
    const std::string cfg = network_config_json(p.config);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    std::ostringstream manifest;
    manifest << "bpmot-weights version " << kWeightsVersion << "\n" << "config " << cfg << "\n";
    for (const auto& t : tensors) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows));
        write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols));
        // Eigen storage is column-major; the file is row-major.
        for (Eigen::Index r = 0; r < t.rows; ++r) {
            for (Eigen::Index c = 0; c < t.cols; ++c) write_pod<double>(os, t.data[c * t.rows + r]);
        }
        manifest << t.name << " " << t.rows << " " << t.cols << "\n";
    }
    if (!os) throw Error(ErrorCode::IoError, "failed writing weights: " + path);
    std::ofstream ms(path + ".manifest");
    if (!ms) throw Error(ErrorCode::IoError, "cannot write manifest for: " + path);
    ms << manifest.str();
}

NetworkParams load_weights(const std::string& path, const NetworkConfig* expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot read weights: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw Error(ErrorCode::FormatVersionMismatch, "not a weights file: " + path);
    }
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kWeightsVersion) {
        throw Error(ErrorCode::FormatVersionMismatch, "unsupported weights version " + std::to_string(version));
    }
    const NetworkConfig cfg = network_config_from_json(read_string(is, read_pod<std::uint32_t>(is)));
    if (expected && (expected->hidden_dim != cfg.hidden_dim || expected->max_neighbors != cfg.max_neighbors ||
                     expected->state_dim != cfg.state_dim || expected->shape_dim != cfg.shape_dim ||
                     expected->descriptor_dim != cfg.descriptor_dim || expected->factor_hidden != cfg.factor_hidden)) {
        throw Error(ErrorCode::ShapeMismatch, "weights dimensions (d_h=" + std::to_string(cfg.hidden_dim) +
                                                  ") do not match configuration (d_h=" +
                                                  std::to_string(expected->hidden_dim) + ")");
    }
    Rng rng(0);
    NetworkParams p = make_network(cfg, rng);
    std::vector<nn::TensorRef> tensors;
    collect_all(p, tensors);
    const auto count = read_pod<std::uint32_t>(is);
    if (count != tensors.size()) throw Error(ErrorCode::ShapeMismatch, "weights tensor count mismatch");
    for (auto& t : tensors) {
        const std::string name = read_string(is, read_pod<std::uint32_t>(is));
        const auto rows = read_pod<std::uint64_t>(is);
        const auto cols = read_pod<std::uint64_t>(is);
        if (name != t.name || rows != static_cast<std::uint64_t>(t.rows) ||
            cols != static_cast<std::uint64_t>(t.cols)) {
            throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " does not match " + t.name);
        }
        for (Eigen::Index r = 0; r < t.rows; ++r) {
            for (Eigen::Index c = 0; c < t.cols; ++c) t.data[c * t.rows + r] = read_pod<double>(is);
        }
    }
    return p;
}

}  // namespace bpmot
