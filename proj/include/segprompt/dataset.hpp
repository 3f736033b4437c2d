#pragma once

// On-disk dataset: a manifest.json plus per-study PGM images and masks.

#include "segprompt/prompting.hpp"
#include "segprompt/som.hpp"
#include "segprompt/synth.hpp"
#include "segprompt/tokenizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace segprompt::dataset {

namespace fs = std::filesystem;
using prompting::View;

struct Manifest {
  fs::path dir;
  nlohmann::json doc;  // {"version", "image_size", "spec", "som", "studies": [...]}
};

struct StudyRecord {
  std::string id;
  std::string split;
  prompting::StudyInput input;
  // Masks kept for scoring only: exact masks under mask noise, or the masks
  // that were burnt into SoM overlays.
  std::map<View, masks::MaskSet> eval_masks;
  std::map<View, std::vector<som::LegendEntry>> legends;
  bool som_prompts = false;  // append the mark listing to prompts
};

/// Writes images, masks and manifest.json under out_dir. Studies are drawn in
/// parallel from per-study seeds, so the tree does not depend on thread count.
Manifest generate_dataset(const synth::SynthSpec& spec, const fs::path& out_dir, int threads = 0);

Manifest load_manifest(const fs::path& dir);
void save_manifest(const Manifest& m);

/// Studies of one split, or all when split is empty.
std::vector<StudyRecord> load_studies(const Manifest& m, const std::string& split = "");

/// In-memory record for a freshly drawn study (no files involved).
StudyRecord to_record(const synth::SyntheticStudy& s, const std::string& split = "train");

/// build_prompt plus, for SoM datasets with augmented prompts, the mark listing of each included view.
prompting::Prompt make_prompt(const StudyRecord& r, prompting::Strategy strategy, bool single_view,
                              prompting::MaskNames names = prompting::MaskNames::Default);

/// Closed vocabulary over every text the prompts and targets of `records` can contain.
mllm::Tokenizer build_tokenizer(const std::vector<StudyRecord>& records);

/// Copies the dataset with every view re-rendered through the set-of-marks
/// overlay; legends saved next to the images; masks move to evaluation-only.
Manifest render_som_dataset(const Manifest& src, const som::MarkStyle& style, bool augment_prompts,
                            const fs::path& out_dir);

}  // namespace segprompt::dataset
