#include "segprompt/encoder.hpp"
#include "segprompt/nn/optim.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace segprompt;
using namespace segprompt::encoder;

namespace {

VitConfig small(int depth = 4, std::vector<int> taps = {2, 4}) {
  VitConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.depth = depth;
  c.dim = 16;
  c.heads = 2;
  c.tap_layers = std::move(taps);
  return c;
}

nn::Matrix<double> image(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::Matrix<double> m(side, side);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// One optimizer step on a loss that reaches every encoder parameter.
void train_step(VitEncoder<double>& enc, const nn::Matrix<double>& img) {
  auto params = enc.parameters();
  nn::zero_grads(params);
  nn::Tape<double> tape;
  auto out = enc.encode(tape, img);
  tape.backward(nn::sum_squares(out.final));
  nn::OptimState<double> st;
  nn::adamw_step(params, st, 1e-2);
}

}  // namespace

TEST(Encoder, GridShapes) {
  VitConfig c;  // 64 px, patch 16
  c.dim = 16;
  c.heads = 2;
  VitEncoder<double> enc(c, 1);
  const auto v = enc.encode_values(image(64, 0));
  ASSERT_EQ(v.taps.size(), 4u);
  for (const auto& [layer, g] : v.taps) {
    EXPECT_EQ(g.rows, 4);
    EXPECT_EQ(g.cols, 4);
    EXPECT_EQ(g.features.rows(), 16);
    EXPECT_EQ(g.dim(), 16);
  }
}

TEST(Encoder, Deterministic) {
  VitEncoder<double> a(small(), 9), b(small(), 9);
  const auto img = image(32, 3);
  const auto va = a.encode_values(img);
  const auto vb = b.encode_values(img);
  const auto va2 = a.encode_values(img);
  for (const auto& [layer, g] : va.taps) {
    EXPECT_EQ(g.features, vb.taps.at(layer).features);
    EXPECT_EQ(g.features, va2.taps.at(layer).features);
  }
}

TEST(Encoder, TapListSelectsBlocks) {
  VitEncoder<double> enc(small(4, {2, 4}), 1);
  const auto v = enc.encode_values(image(32, 1));
  ASSERT_EQ(v.taps.size(), 2u);
  EXPECT_TRUE(v.taps.count(2));
  EXPECT_TRUE(v.taps.count(4));
  // The last tap is the last block's output.
  EXPECT_EQ(v.taps.at(4).features, v.final.features);
}

TEST(Encoder, WrongExtentsRejected) {
  VitEncoder<double> enc(small(), 1);
  EXPECT_THROW(enc.encode_values(image(24, 0)), ContractError);
  EXPECT_THROW(VitEncoder<double>(small(4, {5}), 1), ContractError);
}

TEST(Encoder, PatchifyIsRasterOrder) {
  VitEncoder<double> enc(small(), 1);
  nn::Matrix<double> img(32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) img(r, c) = (r * 32 + c) / 1024.0;
  const auto p = enc.patchify(img);
  EXPECT_EQ(p.rows(), 16);
  EXPECT_EQ(p.cols(), 64);
  // Patch (1,2) row 3 col 5 is pixel (11, 21).
  EXPECT_DOUBLE_EQ(p(1 * 4 + 2, 3 * 8 + 5), img(11, 21));
}

TEST(Encoder, FrozenStepLeavesWeightsBitIdentical) {
  VitEncoder<double> enc(small(), 4);
  set_frozen(enc);
  const auto before = parameter_checksum(enc.parameters());
  train_step(enc, image(32, 2));
  EXPECT_EQ(parameter_checksum(enc.parameters()), before);
  EXPECT_TRUE(enc.frozen());
}

TEST(Encoder, UnfrozenStepChangesWeights) {
  VitEncoder<double> enc(small(), 4);
  const auto before = parameter_checksum(enc.parameters());
  train_step(enc, image(32, 2));
  EXPECT_NE(parameter_checksum(enc.parameters()), before);
}

TEST(Encoder, GradientsReachThePatchEmbedding) {
  VitEncoder<double> enc(small(2, {1, 2}), 6);
  const auto img = image(32, 8);
  std::mt19937_64 rng(1);
  const auto off = testkit::random_matrix(16, 16, rng);
  auto ps = enc.parameters();
  auto r = testkit::check_param_grads(ps, [&](nn::Tape<double>& t) {
    auto out = enc.encode(t, img);
    return nn::sum_squares(nn::add(out.final, t.constant(off)));
  });
  EXPECT_LT(r.worst, 1e-4) << r.where;
}
