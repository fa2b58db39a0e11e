#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace ccnn {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

/// Read once from CCNN_LOG (quiet, info, debug); defaults to info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("CCNN_LOG");
    const std::string_view v = env ? env : "";
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

template <typename... Args>
void log_line(LogLevel level, const Args&... args) {
  if (level == LogLevel::Quiet || int(level) > int(log_level())) return;
  ((std::clog << args), ...) << '\n';
}

}  // namespace ccnn
