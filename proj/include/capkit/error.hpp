#pragma once

#include <stdexcept>
#include <string>

namespace capkit {

/// Error raised by every capkit subsystem. `code` is a short stable tag
/// (e.g. "shape_mismatch", "io") that the CLI prints in its one-line
/// machine-readable error report.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define CAPKIT_CHECK(cond, code, msg)                   \
  do {                                                  \
    if (!(cond)) throw ::capkit::Error((code), (msg));  \
  } while (false)

}  // namespace capkit
