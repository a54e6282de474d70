#pragma once

#include <stdexcept>
#include <string>

namespace splitmetric {

/// Domain error raised by every module. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace splitmetric
