#pragma once

#include <stdexcept>
#include <string>

namespace trunclab {

// Contract violations (bad arguments, shape mismatches) and invalid configs.
// These map to CLI exit code 1 when raised during argument/config handling.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Runtime failures: numeric blowups, I/O problems, corrupt files.
// These map to CLI exit code 2.
class runtime_failure : public std::runtime_error {
 public:
  explicit runtime_failure(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value detected inside the autodiff engine or the trainer.
class numeric_error : public runtime_failure {
 public:
  explicit numeric_error(const std::string& what) : runtime_failure(what) {}
};

// Malformed or incompatible serialized artifact (checkpoint, corpus cache).
class format_error : public runtime_failure {
 public:
  explicit format_error(const std::string& what) : runtime_failure(what) {}
};

}  // namespace trunclab
