#pragma once

namespace somaslam {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace somaslam
