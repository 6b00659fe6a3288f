#pragma once

#include <functional>
#include <string>

namespace pathenv::log {

enum class Level { debug, info, warning, error };

using Sink = std::function<void(Level, const std::string&)>;

// Installs a process-wide sink; passing an empty function restores stderr output.
void set_sink(Sink sink);
void set_min_level(Level level);

void write(Level level, const std::string& msg);
inline void debug(const std::string& msg) { write(Level::debug, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void warn(const std::string& msg) { write(Level::warning, msg); }
inline void error(const std::string& msg) { write(Level::error, msg); }

const char* level_name(Level level);

}  // namespace pathenv::log
