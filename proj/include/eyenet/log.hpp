#pragma once

// Minimal leveled logging to stderr. Verbosity comes from EYENET_LOG_LEVEL
// (error, warn, info, debug); default info.

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace eyenet::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level level_from_env() {
  const char* v = std::getenv("EYENET_LOG_LEVEL");
  if (!v) return Level::info;
  const std::string_view s(v);
  if (s == "error") return Level::error;
  if (s == "warn") return Level::warn;
  if (s == "debug") return Level::debug;
  return Level::info;
}

inline Level& threshold() {
  static Level l = level_from_env();
  return l;
}

inline void write(Level l, std::string_view msg) {
  if (static_cast<int>(l) > static_cast<int>(threshold())) return;
  static constexpr const char* tags[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << tags[static_cast<int>(l)] << "] " << msg << "\n";
}

inline void error(std::string_view m) { write(Level::error, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void debug(std::string_view m) { write(Level::debug, m); }

}  // namespace eyenet::log
