#include "pointlang/common.hpp"

#include <cmath>

#include "pointlang/rng.hpp"

namespace pointlang {

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

double Rng::gaussian() {
  double u1 = uniform(), u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace pointlang
