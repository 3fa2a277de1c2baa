#pragma once

// Round-trip exact text formatting for CSV output.

#include <cstdio>
#include <string>

namespace mjnn {

/// %.17g, enough digits to reproduce any double exactly.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace mjnn
