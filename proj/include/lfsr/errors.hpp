#pragma once

#include "lfsr/tensor.hpp"

#include <stdexcept>
#include <string>

namespace lfsr {

/// Non-finite or otherwise unusable input values.
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A mask (or detector) found no lesion; the slice is excluded.
class NoLesionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ROI box not aligned to the magnification grid.
class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file on disk; the message names the file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A component lacks a capability an operation needs (e.g. differentiability).
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long step, const std::string& term, double value)
      : std::runtime_error("non-finite loss term '" + term + "' at step " + std::to_string(step) +
                           " (value " + std::to_string(value) + ")"),
        step_(step),
        term_(term) {}
  long step() const { return step_; }
  const std::string& term() const { return term_; }

 private:
  long step_;
  std::string term_;
};

}  // namespace lfsr
