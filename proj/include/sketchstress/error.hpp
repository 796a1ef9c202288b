#pragma once

#include <stdexcept>
#include <string>

namespace sketchstress {

enum class ErrorCode {
  kInvalidArgument,
  kNotWatertight,
  kNoGroundContact,
  kEmptyRegion,
  kSingularSystem,
  kOutOfBounds,
  kNotFound,
  kIo,
  kNumerical,
};

// Single exception type for the library; `code()` lets callers (the HTTP
// service in particular) map failures onto transport-level statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace sketchstress
