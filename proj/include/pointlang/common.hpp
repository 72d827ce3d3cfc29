#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pointlang {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures onto exit codes in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/array dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced by a numeric op, or detected in data that must be finite.
struct NumericError : Error {
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Malformed file or stream. `offset` is the byte position when known.
struct ParseError : Error {
  ParseError(const std::string& msg, std::uint64_t offset_bytes)
      : Error(msg + " (byte offset " + std::to_string(offset_bytes) + ")"),
        offset(offset_bytes) {}
  std::uint64_t offset = 0;
};

// Bad configuration: unknown key, wrong type, inconsistent values.
struct ConfigError : Error {
  using Error::Error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

// cat("a=", 1, " b=", 2.5) -> "a=1 b=2.5"
template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  os.precision(17);
  detail::format_into(os, args...);
  return os.str();
}

template <typename Err = ContractError, typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw Err(cat(args...));
}

// FNV-1a 64-bit. Used for content hashes (checkpoints, manifests) and for
// deriving named RNG streams. Not cryptographic.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

std::string to_hex(std::uint64_t v);

}  // namespace pointlang
