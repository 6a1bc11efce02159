#pragma once

namespace iwgae {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace iwgae
