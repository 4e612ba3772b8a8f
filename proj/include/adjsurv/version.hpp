#pragma once

namespace adjsurv {
inline constexpr const char* kVersion = "0.1.0";
}
