#pragma once

namespace qachain {
inline constexpr const char* kVersion = "0.1.0";
}
