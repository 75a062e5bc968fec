#pragma once

#include <string>

namespace matkit::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

// Current level, resolved once from MAT_LOG_LEVEL (error|info|debug).
// Unset or unrecognized values fall back to Error.
Level level();

bool enabled(Level lv);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

} // namespace matkit::log
