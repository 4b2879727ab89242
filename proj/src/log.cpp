#include "bpmot/log.hpp"

#include "bpmot/errors.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>

namespace bpmot {

const char* error_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::EmptyWeights: return "EmptyWeights";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::TooLarge: return "TooLarge";
        case ErrorCode::DegenerateProblem: return "DegenerateProblem";
        case ErrorCode::DegenerateWeights: return "DegenerateWeights";
        case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::Usage: return "Usage";
        case ErrorCode::MissingWeights: return "MissingWeights";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::OutOfRegion: return "OutOfRegion";
    }
    return "Unknown";
}

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ConfigInvalid:
        case ErrorCode::Usage:
        case ErrorCode::MissingWeights:
            return 2;
        case ErrorCode::FormatVersionMismatch:
        case ErrorCode::ShapeMismatch:
        case ErrorCode::IoError:
        case ErrorCode::SchemaMismatch:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::TooLarge:
        case ErrorCode::OutOfRegion:
            return 3;
        case ErrorCode::NotPositiveDefinite:
        case ErrorCode::EmptyWeights:
        case ErrorCode::DegenerateProblem:
        case ErrorCode::DegenerateWeights:
        case ErrorCode::NonFiniteLoss:
            return 4;
    }
    return 4;
}

namespace log {
namespace {

spdlog::logger& logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto lg = spdlog::stderr_color_mt("bpmot");
        lg->set_pattern("[%l] %v");
        const char* env = std::getenv("BPMOT_LOG");
        lg->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
        return lg;
    }();
    return *instance;
}

}  // namespace

void debug(const std::string& msg) { logger().debug(msg); }
void info(const std::string& msg) { logger().info(msg); }
void warn(const std::string& msg) { logger().warn(msg); }
void error(const std::string& msg) { logger().error(msg); }

}  // namespace log
}  // namespace bpmot
