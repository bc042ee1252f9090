#pragma once

#include <stdexcept>
#include <string>

namespace lgloc {

enum class ErrorKind {
  invalid_argument,
  no_closed_form,
  quadrature,
  singular,
  numerical,
  config,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::no_closed_form: return "no_closed_form";
    case ErrorKind::quadrature: return "quadrature";
    case ErrorKind::singular: return "singular";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Base exception for the library. `kind()` drives the CLI exit-code mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when adaptive quadrature cannot reach its tolerance. Carries the last two estimates.
class QuadratureError : public Error {
 public:
  QuadratureError(const std::string& what, double previous, double last)
      : Error(ErrorKind::quadrature, what), previous_(previous), last_(last) {}
  double previous_estimate() const noexcept { return previous_; }
  double last_estimate() const noexcept { return last_; }

 private:
  double previous_;
  double last_;
};

}  // namespace lgloc
