#pragma once

#include <stdexcept>
#include <string>

namespace gman {

/// Base class for every error raised by the library. The category drives the
/// CLI exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { usage, data, numeric };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

/// Tensor extents disagree with an operation's contract.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Category::data, "dimension error: " + what) {}
};

/// Malformed or out-of-range input data (files, timestamps, distances).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(Category::data, what) {}
};

/// Invalid configuration or API misuse.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::usage, what) {}
};

/// Non-finite values, degenerate statistics, divergence.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Category::numeric, what) {}
};

}  // namespace gman
