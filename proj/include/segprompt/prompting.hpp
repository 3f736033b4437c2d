#pragma once

#include "segprompt/image.hpp"
#include "segprompt/masks.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace segprompt::prompting {

using masks::MaskSet;
using masks::StructureId;

enum class View { CurrentFrontal, CurrentLateral, PriorFrontal };
inline constexpr View kAllViews[] = {View::CurrentFrontal, View::CurrentLateral, View::PriorFrontal};

/// NS: no seg tokens; DC: unlabeled block after the image; CS: one combined
/// block per view after a name list; SS: per-structure labeled pairs.
enum class Strategy { NS, DC, CS, SS };

/// Whether the prompt names each positive structure ("left lung mask"). This is
/// independent of the seg tokens: NS can name masks without tokens, SS can
/// carry tokens without names. Default: named for SS and CS, unnamed for NS and DC.
enum class MaskNames { Default, On, Off };

enum class SegToken { Mask, Spatial };

/// What a text span is for; used to locate insertion points and in debug dumps.
enum class TextRole { System, ViewLead, MaskName, NameList, Separator, Instruction, MarkList, Context };

struct TextSpan {
  std::string text;
  TextRole role = TextRole::System;
  bool operator==(const TextSpan&) const = default;
};
struct ImageSlot {
  View view;
  bool operator==(const ImageSlot&) const = default;
};
struct SegSlot {
  View view;
  StructureId structure;
  SegToken token;
  bool operator==(const SegSlot&) const = default;
};
struct CombinedSegSlot {
  View view;
  bool operator==(const CombinedSegSlot&) const = default;
};

using PromptSegment = std::variant<TextSpan, ImageSlot, SegSlot, CombinedSegSlot>;

struct Prompt {
  std::vector<PromptSegment> segments;
  // Set when a seg-token strategy was requested for a study without any positive mask.
  bool degraded_to_ns = false;
  // CombinedSegSlot contents, per view, in canonical order.
  std::vector<std::pair<View, std::vector<StructureId>>> combined;
};

struct ViewInput {
  GrayImage image;
  MaskSet masks;
};

struct TextualContext {
  std::optional<std::string> prior_report;
  std::optional<std::string> indication;
  std::optional<std::string> technique;
  std::optional<std::string> comparison;
};

struct StudyInput {
  std::string id;
  ViewInput frontal;
  std::optional<ViewInput> lateral;
  std::optional<ViewInput> prior;
  TextualContext context;
  std::string target;  // findings text; empty at inference

  const ViewInput* view(View v) const;
};

std::string_view view_key(View v);
std::optional<View> parse_view(std::string_view key);
std::string_view strategy_name(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

/// Fixed prompt texts.
namespace templates {
inline constexpr std::string_view kSystem =
    "You are an expert radiology assistant tasked with interpreting a chest X-ray study.";
inline constexpr std::string_view kFrontalLead = "Given the current frontal image";
inline constexpr std::string_view kLateralLead = "and the current lateral image";
inline constexpr std::string_view kPriorLead = "and the prior frontal image";
inline constexpr std::string_view kInstruction = ", provide a description of the findings in the radiology study.";
inline constexpr std::string_view kInstructionWithPrior =
    ", provide a description of the findings in the radiology study in comparison to the prior frontal image.";
inline constexpr std::string_view kMaskHint =
    " Where segmentation masks are provided to highlight specific image regions, use them to describe the "
    "corresponding structures.";
}  // namespace templates

/// Structure label as it appears in the prompt for a view ("prior " prefix for the prior view).
std::string structure_label(View v, StructureId id);

std::string_view mask_names_key(MaskNames n);
std::optional<MaskNames> parse_mask_names(std::string_view key);

/// Assembles the interleaved prompt. single_view keeps only the current frontal
/// view and drops the textual context. DC and CS have a fixed labeling; asking
/// them for the other one is a contract error.
Prompt build_prompt(const StudyInput& study, Strategy strategy, bool single_view,
                    MaskNames names = MaskNames::Default);

/// Number of LM positions the prompt occupies.
std::size_t count_tokens(const Prompt& p, std::size_t grid_cells,
                         const std::function<std::size_t(std::string_view)>& text_len);

std::size_t count_seg_slots(const Prompt& p);

/// Debug dump: JSON array with one tagged object per segment.
nlohmann::json to_json(const Prompt& p);

}  // namespace segprompt::prompting
