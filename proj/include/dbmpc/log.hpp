#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace dbmpc {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

/// Diagnostic verbosity, read once from DEADBEAT_MPC_LOG (quiet|info|debug).
/// Diagnostics go to stderr; command output is never affected.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("DEADBEAT_MPC_LOG");
        if (!env) return LogLevel::Info;
        const std::string value(env);
        if (value == "quiet") return LogLevel::Quiet;
        if (value == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_info(std::string_view msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "[dbmpc] " << msg << "\n";
}

inline void log_debug(std::string_view msg) {
    if (log_level() >= LogLevel::Debug) std::cerr << "[dbmpc:debug] " << msg << "\n";
}

} // namespace dbmpc
