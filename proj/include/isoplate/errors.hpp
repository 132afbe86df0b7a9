#pragma once

#include <stdexcept>
#include <sstream>
#include <string>

namespace isoplate {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NeighborhoodTooSmall : public Error {
 public:
  explicit NeighborhoodTooSmall(int point)
      : Error("neighborhood of point " + std::to_string(point) +
              " has fewer than 2 members; widen the radius or k"),
        point(point) {}
  int point;
};

class DegenerateNeighborhood : public Error {
 public:
  explicit DegenerateNeighborhood(int point)
      : Error("neighborhood of point " + std::to_string(point) +
              " is degenerate (rank-deficient local parameterization)"),
        point(point) {}
  int point;
};

class MissingTriangulation : public Error {
 public:
  MissingTriangulation() : Error("operation requires a triangulated rest surface") {}
};

class SingularGram : public Error {
 public:
  SingularGram(int point, double condition)
      : Error("MLS Gram matrix of point " + std::to_string(point) +
              " is singular (condition " + std::to_string(condition) + ")"),
        point(point),
        condition(condition) {}
  int point;
  double condition;
};

class SolveFailure : public Error {
 public:
  explicit SolveFailure(const std::string& what, double residual = -1.0)
      : Error("linear solve failed: " + what), residual(residual) {}
  double residual;
};

class MaxIterations : public Error {
  static std::string format_residual(double r) {
    std::ostringstream os;
    os << r;
    return os.str();
  }

 public:
  MaxIterations(int iterations, double residual)
      : Error("projection did not converge after " + std::to_string(iterations) +
              " outer iterations (residual " + format_residual(residual) + ")"),
        iterations(iterations),
        residual(residual) {}
  int iterations;
  double residual;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line(line) {}
  int line;
};

}  // namespace isoplate
