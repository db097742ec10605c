#include "mkrf/error.hpp"

#include <sstream>

namespace mkrf {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::singular_metric: return "singular-metric";
    case ErrorCode::format: return "format";
    case ErrorCode::header: return "header";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::not_converged: return "not-converged";
    case ErrorCode::io: return "io";
    case ErrorCode::inconsistent_regime: return "inconsistent-regime";
    case ErrorCode::singularity_stop: return "singularity-stop";
  }
  return "unknown";
}

namespace {
std::string singular_message(std::size_t index, double lambda_min) {
  std::ostringstream os;
  os << "metric lost positivity at grid index " << index << " (lambda_min = " << lambda_min << ")";
  return os.str();
}
}  // namespace

SingularMetricError::SingularMetricError(std::size_t index, double lambda_min)
    : Error(ErrorCode::singular_metric, singular_message(index, lambda_min)),
      index_(index),
      lambda_min_(lambda_min) {}

}  // namespace mkrf
