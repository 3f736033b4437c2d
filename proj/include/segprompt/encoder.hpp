#pragma once

// Small ViT-style patch encoder with taps on intermediate blocks. It stands in
// for a pretrained frozen image encoder: weights are seeded-random and frozen.

#include "segprompt/nn/layers.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace segprompt::encoder {

using nn::Index;
using nn::Matrix;
using nn::Tape;
using nn::Var;

struct VitConfig {
  int image_size = 64;
  int patch_size = 16;
  int depth = 8;
  int dim = 64;
  int heads = 4;
  std::vector<int> tap_layers = {2, 4, 6, 8};  // 1-based block indices
  // Taps read the residual stream after each block (before any final norm).
  std::string tap_point = "block_output";

  int grid_side() const { return image_size / patch_size; }
  int cells() const { return grid_side() * grid_side(); }

  void validate() const {
    nn::require(patch_size > 0 && image_size > 0 && image_size % patch_size == 0,
                "VitConfig: image_size must be a multiple of patch_size");
    nn::require(depth > 0 && dim > 0 && heads > 0 && dim % heads == 0, "VitConfig: heads must divide dim");
    nn::require(!tap_layers.empty(), "VitConfig: at least one tap layer");
    for (int t : tap_layers) nn::require(t >= 1 && t <= depth, "VitConfig: tap layer " + std::to_string(t) + " outside [1, depth]");
  }
};

/// Patch features on the encoder lattice: rows·cols cells, one dim-wide row per cell (row-major cell order).
template <typename Scalar>
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  Matrix<Scalar> features;

  Index dim() const { return features.cols(); }
};

/// Graph handles for one encoded view.
template <typename Scalar>
struct EncoderOutput {
  std::map<int, Var<Scalar>> taps;
  Var<Scalar> final;
  int rows = 0;
  int cols = 0;
};

/// Detached feature values for one encoded view (what training caches per image).
template <typename Scalar>
struct EncodedView {
  std::map<int, FeatureGrid<Scalar>> taps;
  FeatureGrid<Scalar> final;
};

template <typename Scalar>
class VitEncoder {
 public:
  VitEncoder() = default;
  VitEncoder(VitConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const Index p2 = Index(cfg_.patch_size) * cfg_.patch_size;
    patch_embed_ = nn::Linear<Scalar>("enc.patch_embed", p2, cfg_.dim, rng);
    pos_ = nn::Parameter<Scalar>("enc.pos", nn::scaled_uniform<Scalar>(cfg_.cells(), cfg_.dim, cfg_.dim, rng));
    blocks_.reserve(static_cast<std::size_t>(cfg_.depth));
    for (int b = 0; b < cfg_.depth; ++b)
      blocks_.emplace_back("enc.block" + std::to_string(b + 1), cfg_.dim, cfg_.heads, /*causal=*/false, rng);
  }

  const VitConfig& config() const { return cfg_; }

  /// Rows are patches in raster order, columns the flattened patch pixels.
  Matrix<Scalar> patchify(const Matrix<Scalar>& image) const {
    nn::require(image.rows() == cfg_.image_size && image.cols() == cfg_.image_size,
                "encode: image is " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                    ", encoder expects " + std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size));
    nn::require((image.array() >= Scalar(0)).all() && (image.array() <= Scalar(1)).all(),
                "encode: pixel values must lie in [0,1]");
    const int side = cfg_.grid_side();
    const int p = cfg_.patch_size;
    Matrix<Scalar> out(cfg_.cells(), Index(p) * p);
    for (int gr = 0; gr < side; ++gr)
      for (int gc = 0; gc < side; ++gc)
        for (int r = 0; r < p; ++r)
          out.row(gr * side + gc).segment(Index(r) * p, p) = image.row(gr * p + r).segment(Index(gc) * p, p);
    return out;
  }

  EncoderOutput<Scalar> encode(Tape<Scalar>& tape, const Matrix<Scalar>& image) {
    Var<Scalar> x = patch_embed_(tape, tape.constant(patchify(image)));
    x = nn::add(x, tape.parameter(pos_));
    EncoderOutput<Scalar> out;
    out.rows = out.cols = cfg_.grid_side();
    for (int b = 0; b < cfg_.depth; ++b) {
      x = blocks_[static_cast<std::size_t>(b)](tape, x);
      if (std::find(cfg_.tap_layers.begin(), cfg_.tap_layers.end(), b + 1) != cfg_.tap_layers.end())
        out.taps.emplace(b + 1, x);
    }
    out.final = x;
    return out;
  }

  /// Encodes without keeping a graph.
  EncodedView<Scalar> encode_values(const Matrix<Scalar>& image) {
    Tape<Scalar> tape;
    EncoderOutput<Scalar> o = encode(tape, image);
    EncodedView<Scalar> v;
    for (const auto& [layer, var] : o.taps) v.taps[layer] = FeatureGrid<Scalar>{o.rows, o.cols, var.value()};
    v.final = FeatureGrid<Scalar>{o.rows, o.cols, o.final.value()};
    return v;
  }

  std::vector<EncodedView<Scalar>> encode_batch(const std::vector<Matrix<Scalar>>& images) {
    std::vector<EncodedView<Scalar>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(encode_values(img));
    return out;
  }

  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out;
    patch_embed_.collect(out);
    out.push_back(&pos_);
    for (auto& b : blocks_) b.collect(out);
    return out;
  }

  bool frozen() {
    auto ps = parameters();
    return std::all_of(ps.begin(), ps.end(), [](auto* p) { return p->frozen; });
  }

 private:
  VitConfig cfg_;
  nn::Linear<Scalar> patch_embed_;
  nn::Parameter<Scalar> pos_;
  std::vector<nn::TransformerBlock<Scalar>> blocks_;
};

/// Marks every encoder parameter frozen: the optimizer discards their gradients.
template <typename Scalar>
VitEncoder<Scalar>& set_frozen(VitEncoder<Scalar>& enc, bool frozen = true) {
  for (auto* p : enc.parameters()) p->frozen = frozen;
  return enc;
}

/// FNV-1a over the raw parameter bytes, in parameter order.
template <typename Scalar>
std::uint64_t parameter_checksum(const nn::ParameterList<Scalar>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p->value.size()) * sizeof(Scalar); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace segprompt::encoder
