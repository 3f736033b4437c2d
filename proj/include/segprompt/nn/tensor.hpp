#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace segprompt {

/// Raised when a caller breaks an operation's precondition (shapes, ranges, empty masks).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace nn {

using Index = Eigen::Index;

// Row-major so that a sequence of token/patch vectors is one row each.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// A named trainable tensor with its gradient accumulator.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

template <typename Scalar>
void zero_grads(const ParameterList<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
  return m.allFinite();
}

template <typename To, typename From>
Matrix<To> cast(const Matrix<From>& m) {
  return m.template cast<To>();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace nn
}  // namespace segprompt
