#pragma once

#include "segprompt/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace segprompt::nn {

/// Finite-difference oracle failure (f was not finite at a probe point).
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Central differences (f(x+eps·e_i) − f(x−eps·e_i)) / 2eps for every coordinate of x.
template <typename Scalar>
Matrix<Scalar> finite_diff_grad(const std::function<Scalar(const Matrix<Scalar>&)>& f, const Matrix<Scalar>& x,
                                Scalar eps) {
  require(eps > Scalar(0), "finite_diff_grad: eps must be positive");
  Matrix<Scalar> probe = x;
  Matrix<Scalar> grad(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const Scalar up = f(probe);
    probe.data()[i] = orig - eps;
    const Scalar down = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw OracleError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    grad.data()[i] = (up - down) / (Scalar(2) * eps);
  }
  return grad;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), with 0 when both vanish.
template <typename Scalar>
Scalar relative_error(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "relative_error: shape mismatch");
  const Scalar denom = std::max(a.norm(), b.norm());
  if (denom == Scalar(0)) return Scalar(0);
  return (a - b).norm() / denom;
}

}  // namespace segprompt::nn
