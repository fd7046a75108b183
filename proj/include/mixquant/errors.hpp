#pragma once

#include <stdexcept>
#include <string>

namespace mixquant {

// Bad flags, bad call arguments, contract misuse. CLI exit code 1.
class UsageError : public std::runtime_error {
  public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data: missing files, shape mismatches, out-of-range payloads.
// CLI exit code 2.
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mixquant
