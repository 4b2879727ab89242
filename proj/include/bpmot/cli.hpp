#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bpmot::cli {

/// Column schema of the per-frame curve CSV written by `plot`.
inline constexpr const char* kCurveCsvHeader = "frame,num_gt,num_tracks,tp,fp,fn,ids,mean_error";

/// Runs `bpmot <args...>` (args exclude the program name) and returns the
/// process exit code: 0 ok, 2 config or usage error, 3 data error,
/// 4 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bpmot::cli
