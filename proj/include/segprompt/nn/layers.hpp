#pragma once

#include "segprompt/nn/ops.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace segprompt::nn {

enum class Activation { Gelu, Identity };

/// Uniform(-1/√fan_in, 1/√fan_in), drawn from a seeded engine.
template <typename Scalar>
Matrix<Scalar> scaled_uniform(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

/// y = x·Wᵀ + b, applied to every row of x. W is out×in, b is 1×out.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, Index in_dim, Index out_dim, std::mt19937_64& rng)
      : weight_(name + ".weight", scaled_uniform<Scalar>(out_dim, in_dim, in_dim, rng)),
        bias_(name + ".bias", scaled_uniform<Scalar>(1, out_dim, in_dim, rng)) {}

  Index in_dim() const { return weight_.value.cols(); }
  Index out_dim() const { return weight_.value.rows(); }

  Var<Scalar> operator()(Tape<Scalar>& tape, Var<Scalar> x) {
    require(x.cols() == in_dim(), weight_.name + ": input width " + std::to_string(x.cols()) + ", expected " +
                                      std::to_string(in_dim()));
    return add_row(matmul_transposed(x, tape.parameter(weight_)), tape.parameter(bias_));
  }

  /// Graph-free evaluation.
  Matrix<Scalar> apply(const Matrix<Scalar>& x) const {
    require(x.cols() == in_dim(), weight_.name + ": input width mismatch");
    return (x * weight_.value.transpose()).rowwise() + bias_.value.row(0);
  }

  void set_identity() {
    require(in_dim() == out_dim(), weight_.name + ": identity needs a square layer");
    weight_.value.setIdentity();
    bias_.value.setZero();
  }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  const Parameter<Scalar>& weight() const { return weight_; }
  const Parameter<Scalar>& bias() const { return bias_; }

  void collect(ParameterList<Scalar>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
};

/// Chain of Linear layers with an activation between consecutive layers (not after the last).
template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;
  /// dims = {in, hidden..., out}; dims.size() - 1 layers.
  Mlp(const std::string& name, const std::vector<Index>& dims, Activation act, std::mt19937_64& rng) : act_(act) {
    require(dims.size() >= 2, name + ": an MLP needs at least one layer");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers_.emplace_back(name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }

  Var<Scalar> operator()(Tape<Scalar>& tape, Var<Scalar> x) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](tape, x);
      if (i + 1 < layers_.size() && act_ == Activation::Gelu) x = gelu(x);
    }
    return x;
  }

  std::size_t depth() const { return layers_.size(); }
  Index in_dim() const { return layers_.front().in_dim(); }
  Index out_dim() const { return layers_.back().out_dim(); }
  Activation activation() const { return act_; }
  void set_activation(Activation a) { act_ = a; }
  std::vector<Linear<Scalar>>& layers() { return layers_; }

  void set_identity() {
    act_ = Activation::Identity;
    for (auto& l : layers_) l.set_identity();
  }

  void collect(ParameterList<Scalar>& out) {
    for (auto& l : layers_) l.collect(out);
  }

 private:
  std::vector<Linear<Scalar>> layers_;
  Activation act_ = Activation::Gelu;
};

template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim)
      : gamma_(name + ".gamma", Matrix<Scalar>::Ones(1, dim)), beta_(name + ".beta", Matrix<Scalar>::Zero(1, dim)) {}

  Var<Scalar> operator()(Tape<Scalar>& tape, Var<Scalar> x) {
    return layer_norm(x, tape.parameter(gamma_), tape.parameter(beta_));
  }

  void collect(ParameterList<Scalar>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then h + MLP(LN(h)).
template <typename Scalar>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, Index dim, Index heads, bool causal, std::mt19937_64& rng)
      : heads_(heads),
        causal_(causal),
        ln1_(name + ".ln1", dim),
        q_(name + ".attn.q", dim, dim, rng),
        k_(name + ".attn.k", dim, dim, rng),
        v_(name + ".attn.v", dim, dim, rng),
        o_(name + ".attn.o", dim, dim, rng),
        ln2_(name + ".ln2", dim),
        mlp_(name + ".mlp", {dim, 4 * dim, dim}, Activation::Gelu, rng) {
    require(heads > 0 && dim % heads == 0, name + ": heads must divide dim");
  }

  Var<Scalar> operator()(Tape<Scalar>& tape, Var<Scalar> x) {
    Var<Scalar> h = add(x, attention(tape, ln1_(tape, x)));
    return add(h, mlp_(tape, ln2_(tape, h)));
  }

  void collect(ParameterList<Scalar>& out) {
    ln1_.collect(out);
    q_.collect(out);
    k_.collect(out);
    v_.collect(out);
    o_.collect(out);
    ln2_.collect(out);
    mlp_.collect(out);
  }

 private:
  Var<Scalar> attention(Tape<Scalar>& tape, Var<Scalar> x) {
    Var<Scalar> q = q_(tape, x);
    Var<Scalar> k = k_(tape, x);
    Var<Scalar> v = v_(tape, x);
    const Index head_dim = x.cols() / heads_;
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
    std::vector<Var<Scalar>> outs;
    outs.reserve(static_cast<std::size_t>(heads_));
    for (Index h = 0; h < heads_; ++h) {
      Var<Scalar> qh = slice_cols(q, h * head_dim, head_dim);
      Var<Scalar> kh = slice_cols(k, h * head_dim, head_dim);
      Var<Scalar> vh = slice_cols(v, h * head_dim, head_dim);
      Var<Scalar> probs = softmax_rows(scale(matmul_transposed(qh, kh), inv_sqrt), causal_);
      outs.push_back(matmul(probs, vh));
    }
    return o_(tape, heads_ == 1 ? outs.front() : concat_cols(outs));
  }

  Index heads_ = 1;
  bool causal_ = false;
  LayerNorm<Scalar> ln1_;
  Linear<Scalar> q_, k_, v_, o_;
  LayerNorm<Scalar> ln2_;
  Mlp<Scalar> mlp_;
};

}  // namespace segprompt::nn
