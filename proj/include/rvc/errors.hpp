#pragma once

#include <stdexcept>
#include <string>

namespace rvc {

class JointLimitError : public std::runtime_error {
 public:
  JointLimitError(int joint, double value)
      : std::runtime_error("joint " + std::to_string(joint + 1) + " outside limits (" +
                           std::to_string(value) + ")"),
        joint(joint),
        value(value) {}
  int joint;
  double value;
};

class SingularJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TipNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BehindCamera : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Replay diverged from the recorded log.
class MismatchError : public std::runtime_error {
 public:
  MismatchError(long tick, const std::string& what)
      : std::runtime_error("replay mismatch at tick " + std::to_string(tick) + ": " + what),
        tick(tick) {}
  long tick;
};

}  // namespace rvc
