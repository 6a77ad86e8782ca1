#pragma once

#include <stdexcept>
#include <string>

namespace qmcfem {

/// Invalid configuration or malformed input file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation requested on a domain it does not support (e.g. non-convex).
class UnsupportedDomain : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Factorization failed; usually a coefficient that is not positive.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qmcfem
