#pragma once

#include <stdexcept>
#include <string>

namespace despeckler {

// Coarse error classes. They map one-to-one onto the C API status codes and
// the CLI exit codes (argument -> usage, shape/data -> data, numeric -> numeric).
enum class ErrorKind { Argument, Shape, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_argument(const std::string& what) {
  throw Error(ErrorKind::Argument, what);
}
[[noreturn]] inline void throw_shape(const std::string& what) {
  throw Error(ErrorKind::Shape, what);
}
[[noreturn]] inline void throw_data(const std::string& what) {
  throw Error(ErrorKind::Data, what);
}
[[noreturn]] inline void throw_numeric(const std::string& what) {
  throw Error(ErrorKind::Numeric, what);
}

void warn(const std::string& message);

}  // namespace despeckler
