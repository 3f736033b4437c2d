#include "segprompt/prompting.hpp"

#include <numeric>

namespace segprompt::prompting {

using nn::require;

namespace {

std::string_view role_key(TextRole r) {
  switch (r) {
    case TextRole::System: return "system";
    case TextRole::ViewLead: return "view_lead";
    case TextRole::MaskName: return "mask_name";
    case TextRole::NameList: return "name_list";
    case TextRole::Separator: return "separator";
    case TextRole::Instruction: return "instruction";
    case TextRole::MarkList: return "mark_list";
    case TextRole::Context: return "context";
  }
  return "unknown";
}

std::string_view view_lead(View v) {
  switch (v) {
    case View::CurrentFrontal: return templates::kFrontalLead;
    case View::CurrentLateral: return templates::kLateralLead;
    case View::PriorFrontal: return templates::kPriorLead;
  }
  return {};
}

}  // namespace

const ViewInput* StudyInput::view(View v) const {
  switch (v) {
    case View::CurrentFrontal: return &frontal;
    case View::CurrentLateral: return lateral ? &*lateral : nullptr;
    case View::PriorFrontal: return prior ? &*prior : nullptr;
  }
  return nullptr;
}

std::string_view view_key(View v) {
  switch (v) {
    case View::CurrentFrontal: return "current_frontal";
    case View::CurrentLateral: return "current_lateral";
    case View::PriorFrontal: return "prior_frontal";
  }
  return "unknown";
}

std::optional<View> parse_view(std::string_view key) {
  for (View v : kAllViews)
    if (view_key(v) == key) return v;
  return std::nullopt;
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::NS: return "NS";
    case Strategy::DC: return "DC";
    case Strategy::CS: return "CS";
    case Strategy::SS: return "SS";
  }
  return "??";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::NS, Strategy::DC, Strategy::CS, Strategy::SS})
    if (strategy_name(s) == name) return s;
  return std::nullopt;
}

std::string_view mask_names_key(MaskNames n) {
  switch (n) {
    case MaskNames::Default: return "default";
    case MaskNames::On: return "on";
    case MaskNames::Off: return "off";
  }
  return "default";
}

std::optional<MaskNames> parse_mask_names(std::string_view key) {
  for (MaskNames n : {MaskNames::Default, MaskNames::On, MaskNames::Off})
    if (mask_names_key(n) == key) return n;
  return std::nullopt;
}

std::string structure_label(View v, StructureId id) {
  std::string label(masks::structure_name(id));
  return v == View::PriorFrontal ? "prior " + label : label;
}

Prompt build_prompt(const StudyInput& study, Strategy strategy, bool single_view, MaskNames names) {
  const bool fixed_labels = strategy == Strategy::DC || strategy == Strategy::CS;
  const bool default_named = strategy == Strategy::SS || strategy == Strategy::CS;
  require(!fixed_labels || names == MaskNames::Default || (names == MaskNames::On) == default_named,
          "build_prompt: " + std::string(strategy_name(strategy)) + " does not support mask names '" +
              std::string(mask_names_key(names)) + "'");
  const bool named = names == MaskNames::Default ? default_named : names == MaskNames::On;

  std::vector<View> views = {View::CurrentFrontal};
  if (!single_view) {
    if (study.lateral) views.push_back(View::CurrentLateral);
    if (study.prior) views.push_back(View::PriorFrontal);
  }

  std::size_t positives = 0;
  for (View v : views) positives += study.view(v)->masks.positives().size();

  Prompt p;
  if (strategy != Strategy::NS && positives == 0) {
    p.degraded_to_ns = true;
    strategy = Strategy::NS;
  }

  auto text = [&p](std::string s, TextRole role) { p.segments.emplace_back(TextSpan{std::move(s), role}); };

  text(std::string(templates::kSystem), TextRole::System);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const View v = views[i];
    if (i > 0) text("\n", TextRole::Separator);
    text(std::string(view_lead(v)), TextRole::ViewLead);
    p.segments.emplace_back(ImageSlot{v});

    const auto pos = study.view(v)->masks.positives();
    switch (strategy) {
      case Strategy::NS:
        if (named)
          for (StructureId s : pos) text(", " + structure_label(v, s) + " mask", TextRole::MaskName);
        break;
      case Strategy::DC:
        for (StructureId s : pos) {
          p.segments.emplace_back(SegSlot{v, s, SegToken::Mask});
          p.segments.emplace_back(SegSlot{v, s, SegToken::Spatial});
        }
        break;
      case Strategy::CS: {
        if (pos.empty()) break;
        std::string names;
        for (std::size_t k = 0; k < pos.size(); ++k) names += (k ? ", " : "") + structure_label(v, pos[k]);
        text(", " + names + " masks", TextRole::NameList);
        p.segments.emplace_back(CombinedSegSlot{v});
        p.combined.emplace_back(v, pos);
        break;
      }
      case Strategy::SS:
        for (StructureId s : pos) {
          if (named) text(", " + structure_label(v, s) + " mask", TextRole::MaskName);
          p.segments.emplace_back(SegSlot{v, s, SegToken::Mask});
          p.segments.emplace_back(SegSlot{v, s, SegToken::Spatial});
        }
        break;
    }
  }

  const bool with_prior = !single_view && study.prior.has_value();
  std::string instruction(with_prior ? templates::kInstructionWithPrior : templates::kInstruction);
  // The hint travels with the mask names, not with the tokens.
  if (named && positives > 0) instruction += templates::kMaskHint;
  text(std::move(instruction), TextRole::Instruction);

  if (!single_view) {
    const auto& c = study.context;
    if (c.prior_report) text("prior report: " + *c.prior_report, TextRole::Context);
    if (c.indication) text("indication: " + *c.indication, TextRole::Context);
    if (c.technique) text("technique: " + *c.technique, TextRole::Context);
    if (c.comparison) text("comparison: " + *c.comparison, TextRole::Context);
  }
  return p;
}

std::size_t count_seg_slots(const Prompt& p) {
  return static_cast<std::size_t>(
      std::count_if(p.segments.begin(), p.segments.end(), [](const auto& s) { return std::holds_alternative<SegSlot>(s); }));
}

std::size_t count_tokens(const Prompt& p, std::size_t grid_cells,
                         const std::function<std::size_t(std::string_view)>& text_len) {
  std::size_t total = 0;
  for (const auto& seg : p.segments) {
    if (const auto* t = std::get_if<TextSpan>(&seg)) {
      total += text_len(t->text);
    } else if (std::holds_alternative<ImageSlot>(seg)) {
      total += grid_cells;
    } else if (std::holds_alternative<SegSlot>(seg)) {
      total += 1;
    } else if (const auto* c = std::get_if<CombinedSegSlot>(&seg)) {
      for (const auto& [view, structures] : p.combined)
        if (view == c->view) total += 2 * structures.size();
    }
  }
  return total;
}

nlohmann::json to_json(const Prompt& p) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& seg : p.segments) {
    nlohmann::json j;
    if (const auto* t = std::get_if<TextSpan>(&seg)) {
      j = {{"type", "text"}, {"role", role_key(t->role)}, {"text", t->text}};
    } else if (const auto* i = std::get_if<ImageSlot>(&seg)) {
      j = {{"type", "image"}, {"view", view_key(i->view)}};
    } else if (const auto* s = std::get_if<SegSlot>(&seg)) {
      j = {{"type", "seg"},
           {"view", view_key(s->view)},
           {"structure", masks::structure_key(s->structure)},
           {"token", s->token == SegToken::Mask ? "mask" : "spatial"}};
    } else if (const auto* c = std::get_if<CombinedSegSlot>(&seg)) {
      nlohmann::json names = nlohmann::json::array();
      for (const auto& [view, structures] : p.combined)
        if (view == c->view)
          for (StructureId s : structures) names.push_back(masks::structure_key(s));
      j = {{"type", "combined_seg"}, {"view", view_key(c->view)}, {"structures", names}};
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace segprompt::prompting
