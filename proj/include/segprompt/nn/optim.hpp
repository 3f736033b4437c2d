#pragma once

#include "segprompt/nn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace segprompt::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moments per parameter, aligned with the ParameterList passed to adamw_step.
template <typename Scalar>
struct OptimState {
  AdamWConfig config;
  std::vector<std::string> names;
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
  std::int64_t step = 0;

  explicit OptimState(AdamWConfig c = {}) : config(c) {}
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Frozen parameters are skipped: their gradients are discarded and their values
/// never change. Gradients are not cleared here.
template <typename Scalar>
void adamw_step(const ParameterList<Scalar>& params, OptimState<Scalar>& state, double lr) {
  require(lr >= 0.0, "adamw_step: negative learning rate");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.names.push_back(p->name);
      state.m.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  require(state.m.size() == params.size(), "adamw_step: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    require(p->name == state.names[i], "adamw_step: parameter order changed at " + p->name);
    require(p->grad.rows() == p->value.rows() && p->grad.cols() == p->value.cols() &&
                state.m[i].rows() == p->value.rows() && state.m[i].cols() == p->value.cols(),
            "adamw_step: shape mismatch for " + p->name);
  }

  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(c.beta1);
  const auto b2 = static_cast<Scalar>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (p->frozen) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = p->grad;
    p->value *= static_cast<Scalar>(1.0 - lr * c.weight_decay);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const auto step = static_cast<Scalar>(lr / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    const auto eps = static_cast<Scalar>(c.eps);
    p->value.array() -= step * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
  }
}

/// Linear warmup from 0 over floor(warmup_ratio·total_steps) steps, then cosine decay to 0.
struct LrSchedule {
  double base_lr = 2e-5;
  std::int64_t total_steps = 1;
  double warmup_ratio = 0.03;

  std::int64_t warmup_steps() const {
    // The small guard keeps e.g. 0.03·1000 from flooring to 29.
    return static_cast<std::int64_t>(std::floor(warmup_ratio * static_cast<double>(total_steps) + 1e-9));
  }

  double at(std::int64_t step) const {
    require(total_steps > 0, "LrSchedule: total_steps must be positive");
    require(warmup_ratio >= 0.0 && warmup_ratio < 1.0, "LrSchedule: warmup_ratio must be in [0,1)");
    require(step >= 0 && step <= total_steps,
            "lr_at: step " + std::to_string(step) + " outside [0," + std::to_string(total_steps) + "]");
    const std::int64_t warm = warmup_steps();
    if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

inline double lr_at(const LrSchedule& s, std::int64_t step) { return s.at(step); }

}  // namespace segprompt::nn
