#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace divdis {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by tensor ops whose operand shapes do not conform.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs);

  const std::string& op() const noexcept { return op_; }
  const std::vector<std::size_t>& lhs() const noexcept { return lhs_; }
  const std::vector<std::size_t>& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  std::vector<std::size_t> lhs_;
  std::vector<std::size_t> rhs_;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

std::string format_shape(const std::vector<std::size_t>& shape);

}  // namespace divdis
