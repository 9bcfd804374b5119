#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fedtwins/error.hpp"

namespace testing {

// Code of the fedtwins::Error thrown by f, or nullopt when f returns normally.
inline std::optional<fedtwins::ErrorCode> error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const fedtwins::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::string error_message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const fedtwins::Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace testing
