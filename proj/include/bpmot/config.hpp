#pragma once

#include "bpmot/model.hpp"
#include "bpmot/simulator.hpp"
#include "bpmot/tracker.hpp"
#include "bpmot/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace bpmot::config {

using Json = nlohmann::json;

/// Sections tracker / scenario / train / network / seed. Tracker entries are
/// kept as overrides because the tracker defaults follow the scene.
struct RunConfig {
    sim::ScenarioConfig scenario;
    Json tracker_overrides = Json::object();
    train::TrainConfig train;
    NetworkConfig network;
    std::uint64_t seed = 1;
};

/// Every apply_* updates only the keys present and rejects unknown keys
/// with ConfigInvalid naming the offending field.
void apply_scenario(sim::ScenarioConfig& cfg, const Json& j);
void apply_tracker(tracker::TrackerConfig& cfg, const Json& j);
void apply_train(train::TrainConfig& cfg, const Json& j);
void apply_network(NetworkConfig& cfg, const Json& j);

[[nodiscard]] Json scenario_to_json(const sim::ScenarioConfig& cfg);
[[nodiscard]] sim::ScenarioConfig scenario_from_json(const Json& j);

[[nodiscard]] RunConfig parse_run_config(const Json& j);
[[nodiscard]] RunConfig load_run_config(const std::string& path);

/// Scene-matched tracker settings with the run's overrides applied.
[[nodiscard]] tracker::TrackerConfig tracker_config(const RunConfig& run, const sim::ScenarioConfig& scenario);

}  // namespace bpmot::config
