#pragma once

// Differentiable free functions over Var. Each op evaluates eagerly with Eigen
// and records a closure that maps the output gradient onto its inputs.

#include "segprompt/nn/tape.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace segprompt::nn {

namespace detail {

inline std::string shape_str(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

template <typename Scalar>
void same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  require(a.tape() == b.tape(), "operands live on different tapes");
}

}  // namespace detail

/// a · b
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: " + detail::shape_str(a.rows(), a.cols()) + " by " +
                                    detail::shape_str(b.rows(), b.cols()));
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (a.requires_grad()) t.accumulate(a.id(), g * t.value(b.id()).transpose());
    if (b.requires_grad()) t.accumulate(b.id(), t.value(a.id()).transpose() * g);
  });
}

/// a · bᵀ
template <typename Scalar>
Var<Scalar> matmul_transposed(Var<Scalar> a, Var<Scalar> b) {
  detail::same_tape(a, b);
  require(a.cols() == b.cols(), "matmul_transposed: " + detail::shape_str(a.rows(), a.cols()) + " by (" +
                                    detail::shape_str(b.rows(), b.cols()) + ")^T");
  Matrix<Scalar> out = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (a.requires_grad()) t.accumulate(a.id(), g * t.value(b.id()));
    if (b.requires_grad()) t.accumulate(b.id(), g.transpose() * t.value(a.id()));
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "add: " + detail::shape_str(a.rows(), a.cols()) + " vs " + detail::shape_str(b.rows(), b.cols()));
  Matrix<Scalar> out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), g);
  });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}

/// Adds a 1×n row to every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row) {
  detail::same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(),
          "add_row: " + detail::shape_str(a.rows(), a.cols()) + " + " + detail::shape_str(row.rows(), row.cols()));
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a.id(), g);
    if (row.requires_grad()) t.accumulate(row.id(), g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return a.tape()->record(std::move(out), {a},
                          [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(a.id(), g * s); });
}

/// Exact GELU, x·Φ(x).
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Matrix<Scalar> out = a.value().unaryExpr(
      [inv_sqrt2](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2)); });
  return a.tape()->record(std::move(out), {a}, [a, inv_sqrt2](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Matrix<Scalar> d = t.value(a.id()).unaryExpr([&](Scalar x) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2));
      const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * x * x);
      return cdf + x * pdf;
    });
    t.accumulate(a.id(), g.cwiseProduct(d));
  });
}

/// Per-row layer normalization with affine gain/shift (both 1×n).
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps = Scalar(1e-5)) {
  const Index n = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
          "layer_norm: affine params must be 1x" + std::to_string(n));
  const Matrix<Scalar>& xv = x.value();
  Matrix<Scalar> xhat(xv.rows(), n);
  RowVector<Scalar> inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const Scalar mean = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Scalar>& t,
                                                                             const Matrix<Scalar>& g) {
        if (gamma.requires_grad()) t.accumulate(gamma.id(), g.cwiseProduct(xhat).colwise().sum());
        if (beta.requires_grad()) t.accumulate(beta.id(), g.colwise().sum());
        if (!x.requires_grad()) return;
        const Index n = xhat.cols();
        Matrix<Scalar> dxhat = g.array().rowwise() * t.value(gamma.id()).row(0).array();
        Matrix<Scalar> dx(xhat.rows(), n);
        for (Index r = 0; r < xhat.rows(); ++r) {
          const Scalar mean_d = dxhat.row(r).mean();
          const Scalar mean_dx = dxhat.row(r).dot(xhat.row(r)) / Scalar(n);
          dx.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
        }
        t.accumulate(x.id(), dx);
      });
}

/// Row-wise softmax. With `causal`, row i only attends to columns j ≤ i.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a, bool causal) {
  const Matrix<Scalar>& av = a.value();
  if (causal) require(av.rows() == av.cols(), "causal softmax needs a square score matrix");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(av.rows(), av.cols());
  for (Index r = 0; r < av.rows(); ++r) {
    const Index width = causal ? r + 1 : av.cols();
    auto row = av.row(r).head(width);
    const Scalar mx = row.maxCoeff();
    auto e = (row.array() - mx).exp();
    out.row(r).head(width) = e / e.sum();
  }
  Matrix<Scalar> probs = out;
  return a.tape()->record(std::move(out), {a}, [a, probs = std::move(probs)](Tape<Scalar>& t,
                                                                           const Matrix<Scalar>& g) {
    // dL/da = p ⊙ (g − Σ_j g_j p_j); masked entries have p = 0.
    Matrix<Scalar> d = probs.cwiseProduct(g);
    RowVector<Scalar> dots = d.rowwise().sum().transpose();
    d.array() -= probs.array().colwise() * dots.transpose().array();
    t.accumulate(a.id(), d);
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Matrix<Scalar> out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(a.rows(), a.cols());
    d.middleCols(start, count) = g;
    t.accumulate(a.id(), d);
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Matrix<Scalar> out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(a.rows(), a.cols());
    d.middleRows(start, count) = g;
    t.accumulate(a.id(), d);
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Index c = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) t.accumulate(p.id(), g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: width mismatch " + std::to_string(p.cols()) + " vs " +
                                  std::to_string(cols));
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Index r = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) t.accumulate(p.id(), g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

/// Embedding lookup: row k of the output is row ids[k] of the table.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> table, const std::vector<int>& ids) {
  Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    require(ids[k] >= 0 && ids[k] < table.rows(), "gather_rows: id " + std::to_string(ids[k]) + " out of range");
    out.row(static_cast<Index>(k)) = table.value().row(ids[k]);
  }
  return table.tape()->record(std::move(out), {table}, [table, ids](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(table.rows(), table.cols());
    for (std::size_t k = 0; k < ids.size(); ++k) d.row(ids[k]) += g.row(static_cast<Index>(k));
    t.accumulate(table.id(), d);
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a.id(), Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> sum_squares(Var<Scalar> a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a.id(), Scalar(2) * g(0, 0) * t.value(a.id()));
  });
}

/// Mean token cross-entropy of row-wise logits against `targets`. Rows whose
/// target is negative are ignored (they contribute neither loss nor gradient).
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<int>& targets) {
  const Matrix<Scalar>& lv = logits.value();
  require(static_cast<Index>(targets.size()) == lv.rows(),
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(lv.rows()) + " rows");
  Matrix<Scalar> probs = Matrix<Scalar>::Zero(lv.rows(), lv.cols());
  Scalar total = 0;
  Index counted = 0;
  for (Index r = 0; r < lv.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    require(y < lv.cols(), "cross_entropy: target id out of range");
    const Scalar mx = lv.row(r).maxCoeff();
    auto e = (lv.row(r).array() - mx).exp();
    const Scalar z = e.sum();
    probs.row(r) = e / z;
    total += -(lv(r, y) - mx - std::log(z));
    ++counted;
  }
  require(counted > 0, "cross_entropy: no target positions");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / Scalar(counted);
  return logits.tape()->record(
      std::move(out), {logits},
      [logits, targets, probs = std::move(probs), counted](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Matrix<Scalar> d = probs;
        for (Index r = 0; r < d.rows(); ++r) {
          const int y = targets[static_cast<std::size_t>(r)];
          if (y >= 0) d(r, y) -= Scalar(1);
        }
        t.accumulate(logits.id(), d * (g(0, 0) / Scalar(counted)));
      });
}

}  // namespace segprompt::nn
