#pragma once

#include <functional>
#include <string>

namespace slm::log {

enum class Level { debug, info, warn, error };

void set_level(Level level);
/// Replaces the sink (default: std::clog). Pass nullptr to restore.
void set_sink(std::function<void(Level, const std::string&)> sink);

void write(Level level, const std::string& msg);
inline void debug(const std::string& msg) { write(Level::debug, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void warn(const std::string& msg) { write(Level::warn, msg); }
inline void error(const std::string& msg) { write(Level::error, msg); }

} // namespace slm::log
