#pragma once

#include <stdexcept>
#include <string>

namespace meltnav {

// Invalid model/layout/scenario description (bad partition, non-positive
// budget, unknown config key, malformed file, ...).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Attitude difference hit the pitch singularity; the Euler decomposition is
// undefined there.
class degenerate_attitude_error : public std::runtime_error {
 public:
  explicit degenerate_attitude_error(const std::string& what) : std::runtime_error(what) {}
};

// Implicit step failed to converge (step too large for the requested rates).
class integration_error : public std::runtime_error {
 public:
  explicit integration_error(const std::string& what) : std::runtime_error(what) {}
};

// Iterative solver could not reach the requested tolerances.
class solver_error : public std::runtime_error {
 public:
  explicit solver_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace meltnav
