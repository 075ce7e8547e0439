#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace rksa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

using ItemId = std::int32_t;
using UserId = std::int32_t;

/// Item id 0 is reserved for padding; real items live in [1, num_items].
inline constexpr ItemId kPaddingItem = 0;

/// All randomness in the library flows through an explicitly seeded engine.
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Line-level parse failure while reading an interaction file.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite values, failed factorizations and similar numerical breakdowns.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or API misuse (bad shapes, out-of-range ids).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rksa
