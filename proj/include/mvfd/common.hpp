#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace mvfd {

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

[[noreturn]] inline void fail_invalid(const std::string& m) {
  throw std::invalid_argument(m);
}

[[noreturn]] inline void fail_runtime(const std::string& m) {
  throw std::runtime_error(m);
}

/// Round a double through the nearest float, so in-memory values match what a
/// 32-bit on-disk payload reproduces.
inline double quantize_f32(double v) {
  return static_cast<double>(static_cast<float>(v));
}

}  // namespace mvfd
