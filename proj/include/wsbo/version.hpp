#pragma once

namespace wsbo {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace wsbo
