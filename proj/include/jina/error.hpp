#pragma once

#include <stdexcept>
#include <string>

namespace jina {

// Base for every domain-level failure. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, double residual, int iterations)
      : NumericError(what), residual_(residual), iterations_(iterations) {}

  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

}  // namespace jina
