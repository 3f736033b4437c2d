#include "segprompt/prompting.hpp"
#include "segprompt/realize.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace segprompt;
using namespace segprompt::prompting;
using masks::StructureId;
using testkit::blank_view;
using testkit::rect;

namespace {

std::size_t words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

std::vector<std::string> kinds(const Prompt& p) {
  std::vector<std::string> out;
  for (const auto& j : to_json(p)) out.push_back(j.at("type").get<std::string>());
  return out;
}

StudyInput frontal_only() {
  StudyInput s;
  s.id = "f";
  s.frontal = blank_view();
  return s;
}

}  // namespace

TEST(BuildPrompt, NsFrontalOnlyBaseline) {
  const Prompt p = build_prompt(frontal_only(), Strategy::NS, true);
  ASSERT_EQ(p.segments.size(), 4u);
  EXPECT_EQ(std::get<TextSpan>(p.segments[0]).role, TextRole::System);
  EXPECT_EQ(std::get<TextSpan>(p.segments[1]).text, templates::kFrontalLead);
  EXPECT_EQ(std::get<ImageSlot>(p.segments[2]).view, View::CurrentFrontal);
  EXPECT_EQ(std::get<TextSpan>(p.segments[3]).text, templates::kInstruction);
  EXPECT_FALSE(p.degraded_to_ns);
}

TEST(BuildPrompt, SsLabelsPrecedeTokenPairs) {
  StudyInput s = frontal_only();
  s.frontal.masks.set(StructureId::Heart, rect(64, 30, 20, 40, 40));
  s.frontal.masks.set(StructureId::LeftLung, rect(64, 10, 36, 54, 58));
  const Prompt p = build_prompt(s, Strategy::SS, true);
  EXPECT_EQ(kinds(p), (std::vector<std::string>{"text", "text", "image", "text", "seg", "seg", "text", "seg", "seg",
                                                "text"}));
  EXPECT_EQ(std::get<TextSpan>(p.segments[3]).text, ", left lung mask");
  EXPECT_EQ(std::get<TextSpan>(p.segments[6]).text, ", heart mask");
  EXPECT_EQ(std::get<SegSlot>(p.segments[4]), (SegSlot{View::CurrentFrontal, StructureId::LeftLung, SegToken::Mask}));
  EXPECT_EQ(std::get<SegSlot>(p.segments[8]), (SegSlot{View::CurrentFrontal, StructureId::Heart, SegToken::Spatial}));
}

TEST(BuildPrompt, MultiViewSlotsPartitionedPerView) {
  StudyInput s = frontal_only();
  s.frontal.masks.set(StructureId::LeftLung, rect(64, 10, 36, 54, 58));
  s.frontal.masks.set(StructureId::RightLung, rect(64, 10, 6, 54, 28));
  s.frontal.masks.set(StructureId::NGT, rect(64, 0, 33, 60, 34));
  ViewInput prior = blank_view();
  prior.masks.set(StructureId::LeftLung, rect(64, 10, 36, 54, 58));
  prior.masks.set(StructureId::Heart, rect(64, 30, 20, 40, 40));
  s.prior = prior;
  const Prompt p = build_prompt(s, Strategy::SS, false);
  EXPECT_EQ(count_seg_slots(p), 10u);
  std::vector<View> order;
  for (const auto& seg : p.segments)
    if (const auto* ss = std::get_if<SegSlot>(&seg)) order.push_back(ss->view);
  EXPECT_TRUE(std::is_sorted(order.begin(), order.end()));
  EXPECT_EQ(std::count(order.begin(), order.end(), View::CurrentFrontal), 6);
}

TEST(BuildPrompt, SegStrategyWithoutMasksDegrades) {
  for (Strategy st : {Strategy::DC, Strategy::CS, Strategy::SS}) {
    const Prompt p = build_prompt(frontal_only(), st, true);
    EXPECT_TRUE(p.degraded_to_ns);
    EXPECT_EQ(to_json(p), to_json(build_prompt(frontal_only(), Strategy::NS, true)));
  }
}

TEST(BuildPrompt, DcPutsTokensRightAfterImage) {
  const Prompt p = build_prompt(testkit::golden_study(), Strategy::DC, true);
  EXPECT_EQ(kinds(p), (std::vector<std::string>{"text", "text", "image", "seg", "seg", "seg", "seg", "seg", "seg",
                                                "seg", "seg", "text"}));
}

TEST(BuildPrompt, CsUsesOneNamedBlock) {
  const Prompt p = build_prompt(testkit::golden_study(), Strategy::CS, true);
  EXPECT_EQ(kinds(p), (std::vector<std::string>{"text", "text", "image", "text", "combined_seg", "text"}));
  EXPECT_EQ(std::get<TextSpan>(p.segments[3]).text, ", left lung, right lung, heart, endotracheal tube masks");
  ASSERT_EQ(p.combined.size(), 1u);
  EXPECT_EQ(p.combined[0].second.size(), 4u);
}

TEST(BuildPrompt, SingleViewDropsPriorAndContext) {
  const Prompt p = build_prompt(testkit::golden_study(), Strategy::SS, true);
  for (const auto& seg : p.segments) {
    if (const auto* t = std::get_if<TextSpan>(&seg)) EXPECT_NE(t->role, TextRole::Context);
    if (const auto* i = std::get_if<ImageSlot>(&seg)) EXPECT_EQ(i->view, View::CurrentFrontal);
  }
}

TEST(BuildPrompt, GoldenIsByteExact) {
  const Prompt p = build_prompt(testkit::golden_study(), Strategy::SS, false);
  EXPECT_EQ(to_json(p).dump(2) + "\n", testkit::read_file(testkit::golden_path("prompt_ss_frontal_prior.json")));
}

TEST(CountTokens, NsAndSsDifferByTwoPerPositive) {
  const auto s = testkit::golden_study();
  const std::size_t ns = count_tokens(build_prompt(s, Strategy::NS, false), 16, words);
  const Prompt ss = build_prompt(s, Strategy::SS, false);
  // The mask hint and the label spans are text; seg slots add one position each.
  std::size_t label_words = 0;
  for (const auto& seg : ss.segments)
    if (const auto* t = std::get_if<TextSpan>(&seg); t && t->role == TextRole::MaskName) label_words += words(t->text);
  const std::size_t hint = words(templates::kMaskHint);
  EXPECT_EQ(count_tokens(ss, 16, words), ns + 2 * 7 + label_words + hint);
  EXPECT_EQ(count_tokens(build_prompt(frontal_only(), Strategy::NS, true), 16, words),
            words(templates::kSystem) + words(templates::kFrontalLead) + 16 + words(templates::kInstruction));
}

TEST(Realize, FrontalNsIsTextPlusCells) {
  StudyInput s = frontal_only();
  const Prompt p = build_prompt(s, Strategy::NS, true);
  nn::Tape<double> tape;
  std::map<View, nn::Var<double>> feats{{View::CurrentFrontal, tape.constant(nn::Matrix<double>::Zero(16, 3))}};
  std::size_t text_rows = 0;
  auto r = realize_embeddings<double>(
      tape, p, feats, {},
      [&](nn::Tape<double>& t, std::string_view text) {
        const auto n = static_cast<nn::Index>(words(text));
        text_rows += static_cast<std::size_t>(n);
        return t.constant(nn::Matrix<double>::Ones(n, 3));
      },
      [](nn::Tape<double>&, nn::Var<double> f) { return f; }, [](nn::Tape<double>&, nn::Var<double> v) { return v; });
  EXPECT_EQ(static_cast<std::size_t>(r.embeddings.rows()), text_rows + 16);
  ASSERT_EQ(r.spans.size(), p.segments.size());
  EXPECT_EQ(r.spans[2].length, 16);
}

TEST(Realize, MissingSegTokensNamed) {
  StudyInput s = frontal_only();
  s.frontal.masks.set(StructureId::Heart, rect(64, 30, 20, 40, 40));
  const Prompt p = build_prompt(s, Strategy::SS, true);
  nn::Tape<double> tape;
  std::map<View, nn::Var<double>> feats{{View::CurrentFrontal, tape.constant(nn::Matrix<double>::Zero(16, 3))}};
  try {
    realize_embeddings<double>(
        tape, p, feats, {}, [](nn::Tape<double>& t, std::string_view) { return t.constant(nn::Matrix<double>::Ones(1, 3)); },
        [](nn::Tape<double>&, nn::Var<double> f) { return f; }, [](nn::Tape<double>&, nn::Var<double> v) { return v; });
    FAIL() << "expected a contract error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("current_frontal/Heart"), std::string::npos);
  }
}

TEST(Names, StrategiesAndViewsRoundTrip) {
  for (Strategy st : {Strategy::NS, Strategy::DC, Strategy::CS, Strategy::SS})
    EXPECT_EQ(parse_strategy(strategy_name(st)), st);
  EXPECT_FALSE(parse_strategy("XX").has_value());
  for (View v : kAllViews) EXPECT_EQ(parse_view(view_key(v)), v);
  EXPECT_EQ(structure_label(View::PriorFrontal, StructureId::LeftLung), "prior left lung");
}

TEST(MaskNames, NamesAreIndependentOfTokens) {
  const auto s = testkit::golden_study();
  const Prompt ns_named = build_prompt(s, Strategy::NS, false, MaskNames::On);
  const Prompt ss = build_prompt(s, Strategy::SS, false);
  EXPECT_EQ(count_seg_slots(ns_named), 0u);
  // Dropping the seg slots from SS leaves exactly the named NS prompt.
  Prompt stripped = ss;
  std::erase_if(stripped.segments, [](const PromptSegment& seg) { return std::holds_alternative<SegSlot>(seg); });
  EXPECT_EQ(to_json(stripped), to_json(ns_named));
  EXPECT_EQ(count_tokens(ss, 16, words), count_tokens(ns_named, 16, words) + 2 * 7);

  const Prompt ss_plain = build_prompt(s, Strategy::SS, false, MaskNames::Off);
  Prompt plain_stripped = ss_plain;
  std::erase_if(plain_stripped.segments, [](const PromptSegment& seg) { return std::holds_alternative<SegSlot>(seg); });
  EXPECT_EQ(to_json(plain_stripped), to_json(build_prompt(s, Strategy::NS, false)));
}

TEST(MaskNames, DefaultNsMatchesMaskFreeStudy) {
  StudyInput masked = testkit::golden_study();
  StudyInput bare = masked;
  bare.frontal.masks = masks::MaskSet(64, 64);
  bare.prior->masks = masks::MaskSet(64, 64);
  EXPECT_EQ(to_json(build_prompt(masked, Strategy::NS, false)), to_json(build_prompt(bare, Strategy::NS, false)));
}

TEST(MaskNames, FixedLabelStrategiesRejectOverrides) {
  const auto s = testkit::golden_study();
  EXPECT_THROW(build_prompt(s, Strategy::DC, true, MaskNames::On), ContractError);
  EXPECT_THROW(build_prompt(s, Strategy::CS, true, MaskNames::Off), ContractError);
  EXPECT_NO_THROW(build_prompt(s, Strategy::CS, true, MaskNames::On));
  for (MaskNames n : {MaskNames::Default, MaskNames::On, MaskNames::Off}) EXPECT_EQ(parse_mask_names(mask_names_key(n)), n);
}
