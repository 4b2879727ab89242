#pragma once

#include "bpmot/motion.hpp"
#include "bpmot/neural.hpp"

#include <string>
#include <vector>

namespace bpmot {

struct NetworkConfig {
    int hidden_dim = 64;
    int max_neighbors = 10;
    int state_dim = motion::kStateDim;
    int descriptor_dim = 8;  // feature-map channels
    int shape_dim = 8;       // shape-head output
    int factor_hidden = 32;
    motion::MotionFrame frame = motion::MotionFrame::Local;
    double dt = 0.5;
    double pos_scale = 2.0;
    double vel_scale = 5.0;
    double nbr_scale = 10.0;
    bool affinity_floor = false;

    bool operator==(const NetworkConfig&) const = default;
};

/// All learnable weights.
struct NetworkParams {
    NetworkConfig config;
    motion::MotionParams motion;
    nn::Mlp affinity;
    nn::Mlp fpr;
    nn::Mlp shape_head;
};

[[nodiscard]] NetworkParams make_network(const NetworkConfig& cfg, Rng& rng);
[[nodiscard]] NetworkParams zeros_like(const NetworkParams& p);

/// Sets the factor networks' last layers so that f_af = 1 and f_fpr =
/// sigmoid(37), which rounds to 1 in double precision.
void neutralize_factors(NetworkParams& p);

void collect_motion(NetworkParams& p, std::vector<nn::TensorRef>& out);
void collect_measurement(NetworkParams& p, std::vector<nn::TensorRef>& out);
void collect_all(NetworkParams& p, std::vector<nn::TensorRef>& out);

inline constexpr std::uint32_t kWeightsVersion = 1;

/// Binary container: magic "BPMW", u32 version, u32 config length + JSON
/// config, u32 tensor count, then per tensor u32 name length, name,
/// u64 rows, u64 cols, row-major f64 values. A "<path>.manifest" text
/// file lists the tensors.
void save_weights(const NetworkParams& p, const std::string& path);

/// Loads a weights file; when expected is given its dimensions must match.
[[nodiscard]] NetworkParams load_weights(const std::string& path, const NetworkConfig* expected = nullptr);

[[nodiscard]] std::string network_config_json(const NetworkConfig& cfg);
[[nodiscard]] NetworkConfig network_config_from_json(const std::string& text);

}  // namespace bpmot
