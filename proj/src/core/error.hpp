#pragma once

#include <stdexcept>
#include <string>

namespace advt {

// Error taxonomy mirrors the CLI exit codes: config errors exit 2,
// data-format errors exit 3, phase failures exit 4.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

struct PhaseError : Error {
  std::string phase;
  PhaseError(std::string phase_name, const std::string& msg)
      : Error(phase_name + ": " + msg), phase(std::move(phase_name)) {}
};

}  // namespace advt
