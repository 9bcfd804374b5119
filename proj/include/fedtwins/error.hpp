#pragma once

#include <stdexcept>
#include <string>

namespace fedtwins {

// Error categories. The numeric values are shared with the C API status codes.
enum class ErrorCode : int {
  Dimension = 1,
  Shape = 2,
  NumericDomain = 3,
  Contract = 4,
  Format = 5,
  Range = 6,
  DegenerateBatch = 7,
  DegenerateData = 8,
  DegenerateWeights = 9,
  EmptySubset = 10,
  Split = 11,
  FederationStall = 12,
  Config = 13,
  Io = 14,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace fedtwins
