#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace nvlm {

enum class ErrorCode {
  InvalidArgument,  // bad user input, unusable config
  ShapeMismatch,    // tensor/layout dimension conflicts
  Io,               // file read/write problems
  CheckFailed,      // a numeric or structural check did not hold
  Internal,         // broken invariant inside the library
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

template <typename... Args>
std::string str_cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, Args&&... args) {
  throw Error(code, str_cat(std::forward<Args>(args)...));
}

}  // namespace nvlm
