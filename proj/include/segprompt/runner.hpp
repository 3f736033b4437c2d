#pragma once

// Drivers shared by the CLI and the acceptance checks: train a model on study
// records, save/load a run directory, generate reports, score them.

#include "segprompt/dataset.hpp"
#include "segprompt/metrics.hpp"
#include "segprompt/mllm.hpp"
#include "segprompt/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace segprompt::runner {

namespace fs = std::filesystem;
using Model = mllm::MultimodalModel<float>;
using Prepared = mllm::PreparedStudy<float>;

struct RunConfig {
  mllm::ModelConfig model;
  mllm::TrainConfig train;
};

/// {"model": {...}, "train": {...}}; train keys may also sit at the top level.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

std::vector<Prepared> prepare_all(Model& model, const std::vector<dataset::StudyRecord>& records,
                                  prompting::Strategy strategy, bool single_view,
                                  prompting::MaskNames names = prompting::MaskNames::Default);

struct TrainedRun {
  std::unique_ptr<Model> model;
  mllm::TrainResult result;
};

TrainedRun train_run(const std::vector<dataset::StudyRecord>& train, const mllm::Tokenizer& tokenizer,
                     const RunConfig& cfg, const std::function<void(const mllm::StepLog&)>& on_step = {});

/// model.ckpt, config.json, tokenizer.json, loss.csv.
void save_run(const fs::path& dir, Model& model, const RunConfig& cfg, const mllm::TrainResult& result);
std::unique_ptr<Model> load_run(const fs::path& dir, RunConfig& cfg);

struct Prediction {
  std::string id;
  std::string generated;
  std::string target;
};

std::vector<Prediction> predict(Model& model, const std::vector<dataset::StudyRecord>& records,
                                prompting::Strategy strategy, bool single_view, int max_new = 64,
                                prompting::MaskNames names = prompting::MaskNames::Default);

struct EvalSummary {
  nlohmann::json report;
  double micro_f1 = 0.0;  // point estimate over all samples
  double macro_f1 = 0.0;
  double corpus_bleu4 = 0.0;
};

/// Lexical and mask-relevant F1 scores with bootstrap CIs; Dice/clDice of the
/// model-input masks against the evaluation masks when both exist.
EvalSummary evaluate(const std::vector<Prediction>& predictions, const std::vector<dataset::StudyRecord>& records,
                     const metrics::BootstrapSpec& spec, std::uint64_t seed);

}  // namespace segprompt::runner
