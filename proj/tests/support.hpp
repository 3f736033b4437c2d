#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include "segprompt/nn/gradcheck.hpp"
#include "segprompt/nn/tape.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace segprompt::testkit {

using nn::Matrix;

inline Matrix<double> random_matrix(nn::Index rows, nn::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix<double> m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

struct GradReport {
  double worst = 0.0;
  std::string where;
};

/// Backprop gradients vs central differences for every parameter the loss
/// touches. Gradients whose norms are both below `floor` count as agreeing
/// (e.g. attention key biases, which softmax shift-invariance makes exactly zero).
template <typename LossFn>
GradReport check_param_grads(const nn::ParameterList<double>& params, LossFn&& loss, double eps = 1e-6,
                             double floor = 1e-7) {
  nn::zero_grads(params);
  {
    nn::Tape<double> tape;
    tape.backward(loss(tape));
  }
  GradReport report;
  for (auto* p : params) {
    const Matrix<double> analytic = p->grad;
    const Matrix<double> saved = p->value;
    auto f = [&](const Matrix<double>& x) {
      p->value = x;
      nn::Tape<double> tape;
      return loss(tape).value()(0, 0);
    };
    const Matrix<double> numeric = nn::finite_diff_grad<double>(f, saved, eps);
    p->value = saved;
    if (std::max(analytic.norm(), numeric.norm()) < floor) continue;
    const double err = nn::relative_error(analytic, numeric);
    if (err > report.worst) {
      report.worst = err;
      report.where = p->name;
    }
  }
  return report;
}

}  // namespace segprompt::testkit
