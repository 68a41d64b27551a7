#pragma once

#include <stdexcept>
#include <string>

namespace fairlens {

/// Invalid configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent data files (CLI exit code 4).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fairlens
