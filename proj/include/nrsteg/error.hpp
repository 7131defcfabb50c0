#pragma once

#include <stdexcept>
#include <string>

namespace nrsteg {

// Bad arguments, shapes or configuration values. Maps to CLI exit status 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Unreadable/unwritable files and malformed file contents. Maps to exit status 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nrsteg
