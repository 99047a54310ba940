#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace mlmv {

using Index = Eigen::Index;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Arr = Eigen::ArrayXXd;

enum class ErrorKind {
  invalid_dimension,
  invalid_covariance,
  invalid_model,
  invalid_config,
  invalid_pairing,
  no_density,
  degenerate_belief,
  degenerate_model,
  map_no_convergence,
  numerical,
  diverged,
  not_computed,
  unsupported,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_dimension: return "invalid-dimension";
    case ErrorKind::invalid_covariance: return "invalid-covariance";
    case ErrorKind::invalid_model: return "invalid-model";
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::invalid_pairing: return "invalid-pairing";
    case ErrorKind::no_density: return "no-density";
    case ErrorKind::degenerate_belief: return "degenerate-belief";
    case ErrorKind::degenerate_model: return "degenerate-model";
    case ErrorKind::map_no_convergence: return "map-no-convergence";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::diverged: return "diverged";
    case ErrorKind::not_computed: return "not-computed";
    case ErrorKind::unsupported: return "unsupported";
  }
  return "error";
}

enum class Mode { mmse, map };

// Inference precision safeguard applied to every Gamma that is formed by subtraction.
struct PrecisionBounds {
  double floor = 1e-8;
  double cap = 1e8;
};

}  // namespace mlmv
