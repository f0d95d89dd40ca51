#pragma once

#include <charconv>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aspm {

// Shortest representation that parses back to the same bits. NaN is spelled
// "NaN" (the rendering used in report tables for undefined metrics).
inline std::string fmt_double(double v) {
  if (v != v) return "NaN";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  if (s == "NaN" || s == "nan") {
    out = std::nan("");
    return true;
  }
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc{} && res.ptr == last;
}

inline double parse_double_or_throw(std::string_view s, const std::string& what) {
  double v = 0.0;
  if (!parse_double(s, v)) throw std::runtime_error(what + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace aspm
