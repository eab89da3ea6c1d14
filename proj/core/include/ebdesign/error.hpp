#pragma once

#include <stdexcept>
#include <string>

namespace ebdesign {

// Every failure the library reports derives from Error; the kind lets
// callers (mostly the CLI) branch without string matching.
enum class ErrorKind {
  invalid_argument,
  degenerate_design,
  degenerate_moments,
  estimation_infeasible,
  nonintegrable_moment,
  quadrature_accuracy,
  unsupported_closed_form,
  configuration,
  infeasible,
  calibration,
  schema,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when adaptive quadrature stops before meeting its tolerance.
class QuadratureError : public Error {
 public:
  QuadratureError(const std::string& what, double residual)
      : Error(ErrorKind::quadrature_accuracy, what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace ebdesign
