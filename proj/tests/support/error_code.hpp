#pragma once

#include <optional>

#include "glandscreen/error.hpp"

namespace glandscreen::testing {

/// Code of the glandscreen::Error thrown by f, or nullopt if it returned normally.
template <class F>
std::optional<ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace glandscreen::testing
