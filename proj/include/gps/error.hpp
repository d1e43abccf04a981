#pragma once

#include <stdexcept>
#include <string>

namespace gps {

/// Base for every error raised by the library. Carries a process exit code
/// so the command-line front end can map failures without string matching.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int exit_code = 1)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

/// Invalid data or arguments handed to an operation.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(what, 1) {}
};

/// Bad configuration or command-line usage.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

/// Missing, unreadable or malformed files.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 3) {}
};

}  // namespace gps
