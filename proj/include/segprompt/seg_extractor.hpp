#pragma once

// Segmentation tokens extractor. Per positive structure it emits two vectors:
//   mask token    = MLP( Σ_tap Linear_tap( mask_pool(features[tap], grid mask) ) )
//   spatial token = Linear( flatten( resample(mask, S×S) ) )

#include "segprompt/encoder.hpp"
#include "segprompt/masks.hpp"
#include "segprompt/nn/layers.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace segprompt::seg {

using masks::BinaryMask;
using masks::GridMask;
using masks::MaskSet;
using masks::StructureId;
using nn::Index;
using nn::Matrix;
using nn::RowVector;
using nn::Tape;
using nn::Var;

struct ExtractorConfig {
  int dim = 768;
  int feature_dim = 768;  // width of the encoder features fed to the tap projections
  std::vector<int> tap_layers = {2, 4, 6, 8};
  int spatial_side = 32;
  int mlp_depth = 2;
  nn::Activation fusion_activation = nn::Activation::Gelu;

  void validate() const {
    nn::require(dim > 0 && feature_dim > 0, "ExtractorConfig: dims must be positive");
    nn::require(!tap_layers.empty(), "ExtractorConfig: tap_layers must be nonempty");
    nn::require(spatial_side > 0, "ExtractorConfig: spatial_side must be positive");
    nn::require(mlp_depth >= 1, "ExtractorConfig: mlp_depth must be at least 1");
  }
};

template <typename Scalar>
struct SegTokenPair {
  StructureId structure;
  RowVector<Scalar> mask_token;
  RowVector<Scalar> spatial_token;
};

/// Graph handles of one structure's tokens (each 1×dim).
template <typename Scalar>
struct SegTokenVars {
  StructureId structure;
  Var<Scalar> mask_token;
  Var<Scalar> spatial_token;
};

/// Precomputed mask-side inputs for one structure: pooling weights over the
/// patch grid and the flattened S×S resample.
template <typename Scalar>
struct MaskInputs {
  StructureId structure;
  GridMask grid;
  Matrix<Scalar> pool_weights;  // 1×cells, 1/k on the k set cells
  Matrix<Scalar> spatial_flat;  // 1×S²
};

template <typename Scalar>
Matrix<Scalar> pool_weights(const GridMask& gm) {
  const Index n = Index(gm.rows()) * gm.cols();
  const auto k = gm.cells.count();
  nn::require(k > 0, "mask_pool: grid mask has no set cells");
  Matrix<Scalar> w = Matrix<Scalar>::Zero(1, n);
  for (int r = 0; r < gm.rows(); ++r)
    for (int c = 0; c < gm.cols(); ++c)
      if (gm.cells.at(r, c)) w(0, Index(r) * gm.cols() + c) = Scalar(1) / Scalar(k);
  return w;
}

template <typename Scalar>
Matrix<Scalar> flatten_spatial(const BinaryMask& m, int side) {
  nn::require(masks::is_positive(m), "spatial_token: mask has no foreground pixels");
  const BinaryMask s = masks::resample_any(m, side, side);
  Matrix<Scalar> flat(1, Index(side) * side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) flat(0, Index(r) * side + c) = s.at(r, c) ? Scalar(1) : Scalar(0);
  return flat;
}

template <typename Scalar>
MaskInputs<Scalar> prepare_mask(StructureId id, const BinaryMask& m, int patch, int spatial_side) {
  nn::require(masks::is_positive(m), "prepare_mask: " + std::string(masks::structure_key(id)) + " mask is empty");
  MaskInputs<Scalar> in{id, masks::to_grid(m, patch), {}, {}};
  in.pool_weights = pool_weights<Scalar>(in.grid);
  in.spatial_flat = flatten_spatial<Scalar>(m, spatial_side);
  return in;
}

/// Mean of the feature rows over the grid mask's set cells.
template <typename Scalar>
Var<Scalar> mask_pool(Tape<Scalar>& tape, Var<Scalar> features, const GridMask& gm) {
  nn::require(features.rows() == Index(gm.rows()) * gm.cols(),
              "mask_pool: grid has " + std::to_string(features.rows()) + " cells, mask has " +
                  std::to_string(gm.rows() * gm.cols()));
  return nn::matmul(tape.constant(pool_weights<Scalar>(gm)), features);
}

template <typename Scalar>
RowVector<Scalar> mask_pool(const encoder::FeatureGrid<Scalar>& fg, const GridMask& gm) {
  nn::require(fg.rows == gm.rows() && fg.cols == gm.cols(), "mask_pool: feature grid and grid mask extents differ");
  return pool_weights<Scalar>(gm) * fg.features;
}

template <typename Scalar>
class SegExtractor {
 public:
  SegExtractor() = default;
  SegExtractor(ExtractorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    for (int t : cfg_.tap_layers)
      taps_.emplace(t, nn::Linear<Scalar>("seg.tap" + std::to_string(t) + ".linear", cfg_.feature_dim, cfg_.dim, rng));
    std::vector<Index> dims(static_cast<std::size_t>(cfg_.mlp_depth) + 1, cfg_.dim);
    fusion_ = nn::Mlp<Scalar>("seg.fusion.mlp", dims, cfg_.fusion_activation, rng);
    spatial_ = nn::Linear<Scalar>("seg.spatial.linear", Index(cfg_.spatial_side) * cfg_.spatial_side, cfg_.dim, rng);
  }

  const ExtractorConfig& config() const { return cfg_; }

  Var<Scalar> mask_token(Tape<Scalar>& tape, const std::map<int, Var<Scalar>>& features, const GridMask& gm) {
    return mask_token(tape, features, tape.constant(pool_weights<Scalar>(gm)));
  }

  /// Same as above with precomputed pooling weights (1×cells).
  Var<Scalar> mask_token(Tape<Scalar>& tape, const std::map<int, Var<Scalar>>& features, Var<Scalar> weights) {
    Var<Scalar> fused;
    for (auto& [layer, proj] : taps_) {
      auto it = features.find(layer);
      nn::require(it != features.end(), "mask_token: features for tap layer " + std::to_string(layer) + " missing");
      nn::require(it->second.rows() == weights.cols(), "mask_token: feature grid and mask grid differ in size");
      Var<Scalar> projected = proj(tape, nn::matmul(weights, it->second));
      fused = fused.valid() ? nn::add(fused, projected) : projected;
    }
    return fusion_(tape, fused);
  }

  Var<Scalar> spatial_token(Tape<Scalar>& tape, const BinaryMask& m) {
    return spatial_(tape, tape.constant(flatten_spatial<Scalar>(m, cfg_.spatial_side)));
  }

  Var<Scalar> spatial_token(Tape<Scalar>& tape, const Matrix<Scalar>& flat) {
    return spatial_(tape, tape.constant(flat));
  }

  SegTokenVars<Scalar> tokens(Tape<Scalar>& tape, const std::map<int, Var<Scalar>>& features,
                              const MaskInputs<Scalar>& in) {
    return {in.structure, mask_token(tape, features, tape.constant(in.pool_weights)),
            spatial_token(tape, in.spatial_flat)};
  }

  /// One pair per positive mask, in canonical structure order.
  std::vector<SegTokenVars<Scalar>> extract_tokens(Tape<Scalar>& tape, const std::map<int, Var<Scalar>>& features,
                                                   const MaskSet& ms, int patch) {
    std::vector<SegTokenVars<Scalar>> out;
    for (StructureId id : ms.positives())
      out.push_back(tokens(tape, features, prepare_mask<Scalar>(id, *ms.find(id), patch, cfg_.spatial_side)));
    return out;
  }

  /// Value-level extraction from detached encoder features.
  std::vector<SegTokenPair<Scalar>> extract_tokens(const encoder::EncodedView<Scalar>& view, const MaskSet& ms,
                                                   int patch) {
    Tape<Scalar> tape;
    std::map<int, Var<Scalar>> features;
    for (const auto& [layer, grid] : view.taps) features.emplace(layer, tape.constant(grid.features));
    std::vector<SegTokenPair<Scalar>> out;
    for (const auto& v : extract_tokens(tape, features, ms, patch))
      out.push_back({v.structure, v.mask_token.value(), v.spatial_token.value()});
    return out;
  }

  /// Identity tap projections and a pass-through fusion MLP (square dims only).
  void set_identity() {
    for (auto& [layer, proj] : taps_) proj.set_identity();
    fusion_.set_identity();
  }

  std::map<int, nn::Linear<Scalar>>& taps() { return taps_; }
  nn::Mlp<Scalar>& fusion() { return fusion_; }
  nn::Linear<Scalar>& spatial() { return spatial_; }

  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out;
    for (auto& [layer, proj] : taps_) proj.collect(out);
    fusion_.collect(out);
    spatial_.collect(out);
    return out;
  }

 private:
  ExtractorConfig cfg_;
  std::map<int, nn::Linear<Scalar>> taps_;
  nn::Mlp<Scalar> fusion_;
  nn::Linear<Scalar> spatial_;
};

}  // namespace segprompt::seg
