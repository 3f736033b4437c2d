#include "segprompt/masks.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace segprompt;
using namespace segprompt::masks;

namespace {

BinaryMask from_points(int h, int w, std::initializer_list<std::pair<int, int>> pts) {
  BinaryMask m(h, w);
  for (auto [r, c] : pts) m.set(r, c);
  return m;
}

BinaryMask filled(int h, int w) {
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.set(r, c);
  return m;
}

std::set<std::pair<int, int>> points(const BinaryMask& m) {
  std::set<std::pair<int, int>> out;
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(r, c)) out.emplace(r, c);
  return out;
}

}  // namespace

TEST(Positive, Cases) {
  EXPECT_FALSE(is_positive(BinaryMask(16, 16)));
  EXPECT_TRUE(is_positive(from_points(16, 16, {{9, 3}})));
  EXPECT_TRUE(is_positive(filled(16, 16)));
}

TEST(ToGrid, AllOnes) {
  const GridMask g = to_grid(filled(8, 8), 4);
  EXPECT_EQ(g.cells, filled(2, 2));
}

TEST(ToGrid, SinglePixelSetsOneCell) {
  const GridMask g = to_grid(from_points(16, 16, {{13, 6}}), 4);
  EXPECT_EQ(points(g.cells), (std::set<std::pair<int, int>>{{3, 1}}));
}

TEST(ToGrid, DiagonalCorners) {
  const GridMask g = to_grid(from_points(4, 4, {{0, 0}, {3, 3}}), 2);
  EXPECT_EQ(points(g.cells), (std::set<std::pair<int, int>>{{0, 0}, {1, 1}}));
}

TEST(ToGrid, MatchesWindowEnumeration) {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.03);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask m(16, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) m.set(r, c, coin(rng));
    const GridMask g = to_grid(m, 4);
    for (int gr = 0; gr < 4; ++gr)
      for (int gc = 0; gc < 4; ++gc) {
        bool any = false;
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) any = any || m.at(gr * 4 + r, gc * 4 + c);
        EXPECT_EQ(g.cells.at(gr, gc), any);
      }
  }
}

TEST(ToGrid, NonDivisibleExtentsRejected) { EXPECT_THROW(to_grid(BinaryMask(10, 10), 4), ContractError); }

TEST(Resample, AnyForegroundDownAndUp) {
  const BinaryMask m = from_points(8, 8, {{7, 0}});
  EXPECT_EQ(points(resample_any(m, 2, 2)), (std::set<std::pair<int, int>>{{1, 0}}));
  const BinaryMask up = resample_any(from_points(2, 2, {{0, 1}}), 4, 4);
  EXPECT_EQ(points(up), (std::set<std::pair<int, int>>{{0, 2}, {0, 3}, {1, 2}, {1, 3}}));
}

TEST(Contour, IsolatedPixel) {
  const BinaryMask m = from_points(5, 5, {{2, 2}});
  EXPECT_EQ(contour(m), m);
}

TEST(Contour, SolidBlockDropsCenter) {
  BinaryMask m(7, 7);
  for (int r = 2; r < 5; ++r)
    for (int c = 2; c < 5; ++c) m.set(r, c);
  // Brute force: foreground pixels with a background 4-neighbour.
  BinaryMask expect(7, 7);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) {
      if (!m.at(r, c)) continue;
      const bool edge = !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
      expect.set(r, c, edge);
    }
  EXPECT_EQ(contour(m), expect);
  EXPECT_EQ(contour(m).count(), 8);
  EXPECT_FALSE(contour(m).at(3, 3));
}

TEST(Contour, AllOnesGivesBorderRing) {
  const BinaryMask c = contour(filled(5, 6));
  EXPECT_EQ(c.count(), 2 * 6 + 2 * 3);
  EXPECT_FALSE(c.at(2, 2));
  EXPECT_TRUE(c.at(0, 3));
  EXPECT_TRUE(c.at(4, 5));
}

TEST(Centroid, Cases) {
  EXPECT_EQ(centroid(from_points(6, 6, {{2, 5}})), std::make_pair(2.0, 5.0));
  EXPECT_EQ(centroid(from_points(3, 3, {{0, 0}, {2, 2}})), std::make_pair(1.0, 1.0));
  const auto [r, c] = centroid(from_points(3, 3, {{0, 0}, {1, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(r, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c, 1.0 / 3.0);
  EXPECT_THROW(centroid(BinaryMask(3, 3)), ContractError);
}

TEST(Components, Cases) {
  EXPECT_TRUE(connected_components(BinaryMask(4, 4)).empty());
  EXPECT_EQ(connected_components(from_points(4, 4, {{0, 0}, {1, 1}})).size(), 1u);
  const auto comps = connected_components(from_points(6, 6, {{0, 0}, {0, 1}, {4, 3}, {4, 4}, {5, 4}}));
  ASSERT_EQ(comps.size(), 2u);
  EXPECT_EQ(comps[0].count(), 3);
  EXPECT_EQ(comps[1].count(), 2);
  EXPECT_TRUE(comps[1].at(0, 0));
}

TEST(MaskSet, PositivesInCanonicalOrder) {
  MaskSet ms(4, 4);
  ms.set(StructureId::Heart, from_points(4, 4, {{1, 1}}));
  ms.set(StructureId::CVC, BinaryMask(4, 4));
  ms.set(StructureId::LeftLung, from_points(4, 4, {{0, 0}}));
  EXPECT_EQ(ms.positives(), (std::vector<StructureId>{StructureId::LeftLung, StructureId::Heart}));
  EXPECT_THROW(ms.set(StructureId::ETT, BinaryMask(5, 4)), ContractError);
}

TEST(Structures, KeysRoundTrip) {
  for (StructureId id : kAllStructures) EXPECT_EQ(parse_structure(structure_key(id)), id);
  EXPECT_FALSE(parse_structure("Spleen").has_value());
  EXPECT_EQ(structure_name(StructureId::ETT), "endotracheal tube");
  EXPECT_TRUE(is_tubular(StructureId::NGT));
  EXPECT_FALSE(is_tubular(StructureId::Heart));
}

TEST(Pgm, MaskRoundTripIsBitIdentical) {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.4);
  BinaryMask m(13, 17);
  for (int r = 0; r < 13; ++r)
    for (int c = 0; c < 17; ++c) m.set(r, c, coin(rng));
  const auto path = std::filesystem::temp_directory_path() / "segprompt_mask_roundtrip.pgm";
  save_mask_pgm(path, m);
  EXPECT_EQ(load_mask_pgm(path), m);
  std::filesystem::remove(path);
}
