#ifndef TSMC_ERRORS_HPP_
#define TSMC_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace tsmc {

// Invalid argument values or violated operation preconditions.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Exact enumeration requested beyond the instance-size guard.
class CapacityError : public std::runtime_error {
 public:
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

// All particle weights collapsed to the log floor.
class DegeneracyError : public std::runtime_error {
 public:
  explicit DegeneracyError(const std::string& msg) : std::runtime_error(msg) {}
};

// Rejection sampling exceeded its attempt cap.
class StarvationError : public std::runtime_error {
 public:
  explicit StarvationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed experiment configuration or unresolved cross-references.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tsmc

#endif  // TSMC_ERRORS_HPP_
