#pragma once

#include <stdexcept>
#include <string>

namespace livreg {

enum class ErrorCode {
    invalid_argument,
    grid_mismatch,
    empty_mask,
    io_error,
    bad_magic,
    unsupported_datatype,
    unsupported_format,
    invalid_data,
    size_mismatch,
    numerical_abort,
};

const char *to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries a code so the CLI can map it
// to an exit status without string matching.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string &what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

} // namespace livreg
