#include "pathenv/log.hpp"

#include <iostream>
#include <mutex>

namespace pathenv::log {

namespace {
std::mutex g_mutex;
Sink g_sink;
Level g_min = Level::warning;
}  // namespace

void set_sink(Sink sink) {
    std::lock_guard lock(g_mutex);
    g_sink = std::move(sink);
}

void set_min_level(Level level) {
    std::lock_guard lock(g_mutex);
    g_min = level;
}

const char* level_name(Level level) {
    switch (level) {
        case Level::debug: return "DEBUG";
        case Level::info: return "INFO";
        case Level::warning: return "WARN";
        case Level::error: return "ERROR";
    }
    return "?";
}

void write(Level level, const std::string& msg) {
    std::lock_guard lock(g_mutex);
    if (level < g_min) return;
    if (g_sink) {
        g_sink(level, msg);
    } else {
        std::cerr << "[" << level_name(level) << "] " << msg << '\n';
    }
}

}  // namespace pathenv::log
