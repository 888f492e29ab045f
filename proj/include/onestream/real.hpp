#pragma once

namespace onestream {

// Scalar type for every tensor in a run, fixed at build configuration.
#if defined(ONESTREAM_REAL_FLOAT)
using Real = float;
inline constexpr const char* kPrecisionName = "f32";
#else
using Real = double;
inline constexpr const char* kPrecisionName = "f64";
#endif

}  // namespace onestream
