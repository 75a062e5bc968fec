#include "matkit/core/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace matkit::log {

Level level() {
    static Level resolved = [] {
        const char* env = std::getenv("MAT_LOG_LEVEL");
        if (env == nullptr) return Level::Error;
        if (std::strcmp(env, "debug") == 0) return Level::Debug;
        if (std::strcmp(env, "info") == 0) return Level::Info;
        return Level::Error;
    }();
    return resolved;
}

bool enabled(Level lv) { return static_cast<int>(lv) <= static_cast<int>(level()); }

namespace {
void emit(const char* tag, const std::string& msg) {
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}
} // namespace

void error(const std::string& msg) {
    if (enabled(Level::Error)) emit("error", msg);
}

void info(const std::string& msg) {
    if (enabled(Level::Info)) emit("info", msg);
}

void debug(const std::string& msg) {
    if (enabled(Level::Debug)) emit("debug", msg);
}

} // namespace matkit::log
