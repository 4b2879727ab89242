#pragma once

#include <string>

namespace bpmot::log {

/// Level is read once from the BPMOT_LOG environment variable
/// (trace, debug, info, warn, error, off; default warn).
void debug(const std::string& msg);
void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

}  // namespace bpmot::log
