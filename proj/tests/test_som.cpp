#include "segprompt/som.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <bit>

using namespace segprompt;
using namespace segprompt::som;
using testkit::rect;

namespace {

GrayImage flat(int side, std::uint8_t v) { return GrayImage::Constant(side, side, v); }

BinaryMask diff(const GrayImage& a, const GrayImage& b) { return BinaryMask::from_pixels((a != b).cast<std::uint8_t>()); }

}  // namespace

TEST(Intensities, AlternatingStartsBright) {
  const std::vector<BinaryMask> ms(3, rect(16, 2, 2, 6, 6));
  EXPECT_EQ(assign_intensities(flat(16, 90), ms, {IntensityKind::Alternating}), (std::vector<std::uint8_t>{255, 0, 255}));
}

TEST(Intensities, ContrastMaxOnBlackPicksWhite) {
  const std::vector<BinaryMask> ms = {rect(16, 2, 2, 6, 6), rect(16, 8, 8, 12, 14)};
  EXPECT_EQ(assign_intensities(flat(16, 0), ms, {IntensityKind::ContrastMax}), (std::vector<std::uint8_t>{255, 255}));
}

TEST(Intensities, ContrastMaxOnBrightContourPicksBlack) {
  // |0 − 200| > |255 − 200|
  EXPECT_EQ(assign_intensities(flat(16, 200), {rect(16, 3, 3, 9, 9)}, {IntensityKind::ContrastMax}),
            (std::vector<std::uint8_t>{0}));
}

TEST(Overlay, EmptyMaskSetIsIdentity) {
  const GrayImage img = flat(32, 77);
  const Overlay o = render_overlay(img, MaskSet(32, 32), MarkStyle{});
  EXPECT_TRUE((o.image == img).all());
  EXPECT_TRUE(o.legend.empty());
  EXPECT_EQ(o.footprint.count(), 0);
}

TEST(Overlay, SolidBlobContourDiffersOnEightPixels) {
  const GrayImage img = flat(16, 100);
  MaskSet ms(16, 16);
  ms.set(StructureId::Heart, rect(16, 5, 5, 8, 8));
  const Overlay o = render_overlay(img, ms, MarkStyle{true, false, {}});
  const BinaryMask d = diff(o.image, img);
  EXPECT_EQ(d.count(), 8);
  EXPECT_EQ(d, masks::contour(*ms.find(StructureId::Heart)));
  EXPECT_EQ(d, o.footprint);
}

TEST(Overlay, LegendFollowsCanonicalOrder) {
  MaskSet ms(64, 64);
  ms.set(StructureId::ETT, rect(64, 2, 31, 30, 32));
  ms.set(StructureId::LeftLung, rect(64, 10, 36, 54, 58));
  const Overlay o = render_overlay(flat(64, 100), ms, MarkStyle{true, true, {IntensityKind::Alternating}});
  ASSERT_EQ(o.legend.size(), 2u);
  EXPECT_EQ(o.legend[0], (LegendEntry{"1", StructureId::LeftLung, 255}));
  EXPECT_EQ(o.legend[1], (LegendEntry{"2", StructureId::ETT, 0}));
}

TEST(Overlay, DiffIsContourAndGlyphFootprint) {
  const GrayImage img = flat(64, 120);
  const auto s = testkit::golden_study();
  const Overlay o = render_overlay(img, s.frontal.masks, MarkStyle{});
  BinaryMask expect(64, 64);
  int k = 1;
  for (StructureId id : s.frontal.masks.positives()) {
    const BinaryMask& m = *s.frontal.masks.find(id);
    const std::string label = std::to_string(k++);
    const auto [top, left] = mark_anchor(m, label);
    expect = masks::mask_union(expect, masks::mask_union(masks::contour(m), glyph_footprint(label, top, left, 64, 64)));
  }
  EXPECT_EQ(diff(o.image, img), expect);
  EXPECT_EQ(o.footprint, expect);
}

TEST(Overlay, UniformModeUsesOneIntensity) {
  const GrayImage img = flat(64, 20);
  const auto s = testkit::golden_study();
  const Overlay o = render_overlay(img, s.frontal.masks, MarkStyle{true, true, {IntensityKind::Uniform, 200}});
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (o.footprint.at(r, c)) EXPECT_EQ(o.image(r, c), 200);
  for (const auto& e : o.legend) EXPECT_EQ(e.intensity, 200);
}

TEST(Overlay, DeterministicAndExtentChecked) {
  const auto s = testkit::golden_study();
  const GrayImage img = flat(64, 90);
  const Overlay a = render_overlay(img, s.frontal.masks, MarkStyle{});
  const Overlay b = render_overlay(img, s.frontal.masks, MarkStyle{});
  EXPECT_TRUE((a.image == b.image).all());
  EXPECT_EQ(a.legend, b.legend);
  EXPECT_THROW(render_overlay(flat(32, 90), s.frontal.masks, MarkStyle{}), ContractError);
}

TEST(Glyphs, FootprintMatchesBitmap) {
  for (int d = 0; d <= 9; ++d) {
    int bits = 0;
    for (auto row : digit_glyph(d)) bits += std::popcount(static_cast<unsigned>(row));
    EXPECT_EQ(glyph_footprint(std::to_string(d), 3, 4, 20, 20).count(), bits) << d;
  }
  // Two digits side by side with one blank column between them.
  const BinaryMask two = glyph_footprint("11", 0, 0, 7, 11);
  EXPECT_EQ(two.count(), 2 * glyph_footprint("1", 0, 0, 7, 5).count());
  EXPECT_TRUE(two.at(0, 2));
  EXPECT_TRUE(two.at(0, 8));
  // Clipped at the border.
  EXPECT_LT(glyph_footprint("8", -2, -2, 10, 10).count(), glyph_footprint("8", 2, 2, 10, 10).count());
}

TEST(AugmentPrompt, EmptyLegendLeavesPromptUnchanged) {
  const auto p = prompting::build_prompt(testkit::golden_study(), prompting::Strategy::NS, true);
  EXPECT_EQ(prompting::to_json(augment_som_prompt(p, {})), prompting::to_json(p));
}

TEST(AugmentPrompt, ListsMarksAfterInstruction) {
  const auto p = prompting::build_prompt(testkit::golden_study(), prompting::Strategy::NS, true);
  const auto q = augment_som_prompt(p, {{"1", StructureId::LeftLung, 255}, {"2", StructureId::ETT, 0}});
  ASSERT_EQ(q.segments.size(), p.segments.size() + 1);
  const auto& t = std::get<prompting::TextSpan>(q.segments.back());
  EXPECT_EQ(t.role, prompting::TextRole::MarkList);
  EXPECT_EQ(t.text, "mark 1: left lung\nmark 2: endotracheal tube");
  const auto prior = augment_som_prompt(p, {{"1", StructureId::Heart, 255}}, prompting::View::PriorFrontal);
  EXPECT_EQ(std::get<prompting::TextSpan>(prior.segments.back()).text, "mark 1: prior heart");
}

TEST(Style, ParsingAndLegendJson) {
  EXPECT_TRUE(parse_style("contours").contours);
  EXPECT_FALSE(parse_style("contours").alphanumerics);
  EXPECT_TRUE(parse_style("contours+marks").alphanumerics);
  EXPECT_THROW(parse_style("glow"), ContractError);
  const std::vector<LegendEntry> legend = {{"1", StructureId::Heart, 0}, {"2", StructureId::NGT, 255}};
  EXPECT_EQ(legend_from_json(legend_to_json(legend)), legend);
}
