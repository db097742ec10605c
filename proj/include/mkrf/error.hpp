#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mkrf {

enum class ErrorCode {
  invalid_input = 1,
  singular_metric,
  format,
  header,
  dimension_mismatch,
  not_converged,
  io,
  inconsistent_regime,
  singularity_stop,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when a metric fails the pointwise positivity test. Carries the flat
// grid index of the worst point and its (normalized) smallest eigenvalue.
class SingularMetricError : public Error {
 public:
  SingularMetricError(std::size_t index, double lambda_min);
  std::size_t index() const noexcept { return index_; }
  double lambda_min() const noexcept { return lambda_min_; }

 private:
  std::size_t index_;
  double lambda_min_;
};

}  // namespace mkrf
