#pragma once

#include "bpmot/evaluation.hpp"
#include "bpmot/simulator.hpp"
#include "bpmot/tracker.hpp"

#include <string>

namespace bpmot::io {

inline constexpr int kSceneVersion = 1;
inline constexpr int kTracksVersion = 1;
inline constexpr int kFeatureMapVersion = 1;

/// Scene as JSON text plus a "<path>.fmap" sidecar holding every frame's
/// feature map (magic "BPFM", u32 version, u32 frames, u32 rows, u32 cols,
/// u32 depth, then row-major f32 values frame after frame).
void write_scene(const sim::Scene& scene, const std::string& path);
[[nodiscard]] sim::Scene read_scene(const std::string& path);

struct TracksFile {
    std::string mode;
    std::uint64_t seed = 0;
    std::string scene;
    tracker::TrackHistory frames;
};

void write_tracks(const TracksFile& tracks, const std::string& path);
[[nodiscard]] TracksFile read_tracks(const std::string& path);

/// Writes text atomically enough for tests: whole content at once.
void write_text(const std::string& path, const std::string& text);
[[nodiscard]] std::string read_text(const std::string& path);

}  // namespace bpmot::io
