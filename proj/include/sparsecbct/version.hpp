#pragma once

namespace sparsecbct {

inline constexpr const char* kToolkitVersion = "0.3.0";

}  // namespace sparsecbct
