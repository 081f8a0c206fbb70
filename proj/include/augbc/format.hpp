#pragma once

#include <cstdio>
#include <string>

namespace augbc {

/// Floats are serialized with 9 significant digits: enough to round-trip
/// single-precision feature values exactly, and stable across reruns.
inline std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Wider format for derived statistics (report files).
inline std::string format_stat(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace augbc
