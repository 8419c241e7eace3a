#pragma once

#include <charconv>
#include <string>

namespace pvgc::detail {

/// Shortest text that parses back to exactly `v`.
inline std::string real_text(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace pvgc::detail
