#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace pianotree {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Quiet = 4 };

/// Threshold comes from the PIANOTREE_LOG environment variable
/// (debug|info|warn|error|quiet), defaulting to info.
inline LogLevel log_threshold() {
  static LogLevel cached = [] {
    const char* env = std::getenv("PIANOTREE_LOG");
    if (!env) return LogLevel::Info;
    if (!std::strcmp(env, "debug")) return LogLevel::Debug;
    if (!std::strcmp(env, "warn")) return LogLevel::Warn;
    if (!std::strcmp(env, "error")) return LogLevel::Error;
    if (!std::strcmp(env, "quiet")) return LogLevel::Quiet;
    return LogLevel::Info;
  }();
  return cached;
}

inline void log_line(LogLevel level, const std::string& msg) {
  if (level < log_threshold()) return;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

inline void log_debug(const std::string& m) { log_line(LogLevel::Debug, m); }
inline void log_info(const std::string& m) { log_line(LogLevel::Info, m); }
inline void log_warn(const std::string& m) { log_line(LogLevel::Warn, m); }
inline void log_error(const std::string& m) { log_line(LogLevel::Error, m); }

}  // namespace pianotree
