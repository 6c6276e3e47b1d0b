#pragma once

namespace dbmpc {

inline constexpr const char* kVersion = "0.1.0";

} // namespace dbmpc
