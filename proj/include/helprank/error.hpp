#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace helprank {

// Domain error with a machine-readable kind ("ParseError", "ShapeError", ...)
// next to the human-readable message. The CLI maps kind to error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

[[noreturn]] inline void raise(const std::string& kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace helprank
