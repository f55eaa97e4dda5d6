#pragma once

#include <cstddef>

namespace cumamba {

inline constexpr const char* kVersion = "0.1.0";

/// Intra-op worker count for OpenMP regions; 0 is treated as 1.
void set_num_threads(std::size_t threads);
std::size_t num_threads();

}  // namespace cumamba
