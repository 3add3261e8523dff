#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace rlmatch {

// Shortest round-trip decimal form; identical bytes for identical doubles.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace rlmatch
