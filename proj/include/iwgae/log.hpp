#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace iwgae::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Verbosity comes from the IWGAE_LOG environment variable
// (error|warn|info|debug). Default: warn.
inline Level threshold() {
  static Level lvl = [] {
    const char* env = std::getenv("IWGAE_LOG");
    if (!env) return Level::warn;
    std::string s(env);
    if (s == "error") return Level::error;
    if (s == "warn") return Level::warn;
    if (s == "info") return Level::info;
    if (s == "debug") return Level::debug;
    return Level::warn;
  }();
  return lvl;
}

inline void emit(Level lvl, const std::string& tag, const std::string& msg) {
  if (lvl <= threshold()) std::cerr << "[iwgae " << tag << "] " << msg << "\n";
}

inline void error(const std::string& msg) { emit(Level::error, "error", msg); }
inline void warn(const std::string& msg) { emit(Level::warn, "warn", msg); }
inline void info(const std::string& msg) { emit(Level::info, "info", msg); }
inline void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

}  // namespace iwgae::log
