#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace pdhlock {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter or frequency lies outside the domain where a model is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The loop is marginal: 1 + alpha (or 1 - t) vanishes at the evaluated point.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A least-squares fit could not produce a physical result.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `line()` is 1-based; 0 when the problem is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

/// A structured document violated its schema. `field()` is a dotted path such as
/// `loop.discriminator.delta_nu_c_Hz`.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace pdhlock
