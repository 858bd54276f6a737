#pragma once

namespace hierdet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hierdet
