#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace gnnlm {

// Violated precondition or broken internal invariant.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed or out-of-range user configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A required upstream artifact is absent or stale.
struct ArtifactError : std::runtime_error {
  explicit ArtifactError(const std::string& what) : std::runtime_error(what) {}
};

// I/O or other unrecoverable runtime failure.
struct RuntimeFailure : std::runtime_error {
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
[[noreturn]] inline void check_fail(const char* expr, const char* file, int line,
                                    const std::string& msg) {
  std::ostringstream oss;
  oss << "contract violation: " << expr;
  if (!msg.empty()) oss << " (" << msg << ")";
  oss << " at " << file << ":" << line;
  throw ContractError(oss.str());
}
}  // namespace detail

}  // namespace gnnlm

#define GNNLM_CHECK(expr, ...)                                                      \
  do {                                                                              \
    if (!(expr)) ::gnnlm::detail::check_fail(#expr, __FILE__, __LINE__,             \
                                             ::std::string{"" __VA_ARGS__});        \
  } while (false)
