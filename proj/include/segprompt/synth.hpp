#pragma once

// Procedural chest-film stand-in: ellipses for lungs and heart, 1-pixel
// polylines for devices, a dark crescent for pneumothorax. Masks are exact and
// the findings text is a pure function of what was drawn.

#include "segprompt/image.hpp"
#include "segprompt/masks.hpp"
#include "segprompt/metrics.hpp"
#include "segprompt/prompting.hpp"
#include "segprompt/tokenizer.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace segprompt::synth {

using masks::StructureId;

enum class NoiseKind { None, Dilate, Erode, Drop };

struct MaskNoise {
  NoiseKind kind = NoiseKind::None;
  double probability = 0.0;  // per positive mask
};

struct SynthSpec {
  std::uint64_t seed = 0;
  int image_size = 64;
  int studies = 64;
  std::map<StructureId, double> structure_prob = {
      {StructureId::LeftLung, 0.95}, {StructureId::RightLung, 0.95}, {StructureId::Heart, 0.9},
      {StructureId::CVC, 0.3},       {StructureId::ETT, 0.3},        {StructureId::NGT, 0.3},
      {StructureId::SGC, 0.15},      {StructureId::ChestTube, 0.15}, {StructureId::Pneumothorax, 0.2}};
  double effusion_prob = 0.2;  // image-only findings
  double opacity_prob = 0.2;
  double prior_prob = 0.3;
  double lateral_prob = 0.3;
  double cardiomegaly_area = 330;  // heart pixel count above which the heart is called enlarged
  int tube_contrast = 12;          // gray levels added along device polylines
  bool tube_sentence = true;
  bool heart_sentence = true;
  std::array<double, 3> splits = {0.8, 0.1, 0.1};
  MaskNoise noise;
};

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// What was drawn on a frontal film; the findings text depends on nothing else.
struct DrawnState {
  std::vector<StructureId> structures;  // canonical order
  bool cardiomegaly = false;
  bool effusion = false;
  bool opacity = false;
  bool has(StructureId id) const;
};

std::string findings_text(const DrawnState& s, const SynthSpec& spec);

/// Keyword labeler over the closed findings grammar.
metrics::LabelVector label_report(const std::string& text);

struct SyntheticStudy {
  prompting::StudyInput input;
  DrawnState state;
  // Exact masks per view; input masks differ only when mask noise is on.
  std::map<prompting::View, masks::MaskSet> gt_masks;
};

/// Deterministic in (spec, seed).
SyntheticStudy draw_study(const SynthSpec& spec, std::uint64_t seed, const std::string& id);

/// Seed of the index-th study.
std::uint64_t study_seed(std::uint64_t base, std::size_t index);

std::string study_id(std::size_t index);

/// Split label per study index ("train", "val", "test"), stable under seed.
std::vector<std::string> assign_splits(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed);

}  // namespace segprompt::synth
