#pragma once

namespace twophoton {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace twophoton
