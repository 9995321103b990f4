#pragma once

#include <charconv>
#include <ostream>
#include <string>
#include <system_error>

namespace divdis {

// Shortest decimal text that parses back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return res.ec == std::errc{} ? std::string(buf, res.ptr) : std::string("nan");
}

struct Num {
  double v;
};

inline std::ostream& operator<<(std::ostream& os, Num n) { return os << shortest(n.v); }

}  // namespace divdis
