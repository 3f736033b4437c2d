// segprompt: generate synthetic studies, render set-of-marks overlays, dump
// prompts/tokens, train, generate and evaluate.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include "segprompt/dataset.hpp"
#include "segprompt/runner.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace segprompt;
using nlohmann::json;
namespace fs = std::filesystem;

void log_event(const json& j) { std::cerr << j.dump() << std::endl; }

json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return json::parse(in);
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << std::endl;
    return;
  }
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

const dataset::StudyRecord& find_study(const std::vector<dataset::StudyRecord>& all, const std::string& id) {
  for (const auto& r : all)
    if (r.id == id) return r;
  throw ContractError("no study '" + id + "' in the manifest");
}

prompting::Strategy strategy_of(const std::string& s) { return *prompting::parse_strategy(s); }

som::IntensityPolicy parse_intensity(const std::string& s) {
  som::IntensityPolicy p;
  if (s == "contrast_max") p.kind = som::IntensityKind::ContrastMax;
  else if (s == "alternating") p.kind = som::IntensityKind::Alternating;
  else if (s.rfind("uniform", 0) == 0) {
    p.kind = som::IntensityKind::Uniform;
    if (s.size() > 8 && s[7] == ':') p.value = static_cast<std::uint8_t>(std::stoi(s.substr(8)));
  } else {
    throw CLI::ValidationError("--intensity", "expected contrast_max, alternating or uniform[:value]");
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation-aware prompting pipeline on synthetic chest films"};
  app.require_subcommand(1);
  const std::vector<std::string> strategies = {"NS", "DC", "CS", "SS"};

  // gen-data
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  auto* gen = app.add_subcommand("gen-data", "Draw a synthetic dataset");
  gen->add_option("--spec", spec_path, "SynthSpec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the seed in the SynthSpec file");
  gen->add_option("--threads", threads, "Worker threads (0 = SEGPROMPT_THREADS or all cores)");

  // render-som
  std::string data_dir, som_style = "contours+marks", intensity = "contrast_max";
  bool no_augment = false;
  auto* som_cmd = app.add_subcommand("render-som", "Copy a dataset with set-of-marks overlays");
  som_cmd->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  som_cmd->add_option("--out", out_dir, "Output directory")->required();
  som_cmd->add_option("--som-style", som_style, "contours, marks or contours+marks")
      ->check(CLI::IsMember({"contours", "marks", "contours+marks"}));
  som_cmd->add_option("--intensity", intensity, "contrast_max, alternating or uniform[:value]");
  som_cmd->add_flag("--plain-prompts", no_augment, "Do not list marks in prompts");

  // extract-tokens
  std::string study, ckpt_dir, config_path, out_path;
  auto* tok_cmd = app.add_subcommand("extract-tokens", "Dump segmentation tokens of one study as JSON");
  tok_cmd->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tok_cmd->add_option("--study", study, "Study id")->required();
  auto* tok_ckpt = tok_cmd->add_option("--ckpt", ckpt_dir, "Run directory with trained weights")->check(CLI::ExistingDirectory);
  tok_cmd->add_option("--config", config_path, "Run config for freshly initialized weights")
      ->check(CLI::ExistingFile)
      ->excludes(tok_ckpt);
  tok_cmd->add_option("--out", out_path, "Output JSON (default stdout)");

  // build-prompt
  std::string strategy;
  bool single_view = false, multi_view = false;
  std::string mask_names;
  const std::vector<std::string> name_modes = {"default", "on", "off"};
  auto* prompt_cmd = app.add_subcommand("build-prompt", "Dump the prompt of one study as JSON");
  prompt_cmd->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  prompt_cmd->add_option("--study", study, "Study id")->required();
  prompt_cmd->add_option("--strategy", strategy, "NS, DC, CS or SS")->required()->check(CLI::IsMember(strategies));
  prompt_cmd->add_flag("--single-view", single_view, "Current frontal view only, no textual context");
  prompt_cmd->add_option("--mask-names", mask_names, "Name positive masks in the text: default, on, off")
      ->check(CLI::IsMember(name_modes));
  prompt_cmd->add_option("--out", out_path, "Output JSON (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train extractor, adapter and LM");
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--strategy", strategy, "NS, DC, CS or SS")->check(CLI::IsMember(strategies));
  train_cmd->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_dir, "Run directory")->required();
  train_cmd->add_option("--seed", seed, "Override the training seed");
  auto* sv = train_cmd->add_flag("--single-view", single_view, "Current frontal view only");
  train_cmd->add_flag("--multi-view", multi_view, "All views and textual context")->excludes(sv);
  train_cmd->add_option("--threads", threads, "Worker threads per batch");
  train_cmd->add_option("--mask-names", mask_names, "Name positive masks in the text: default, on, off")
      ->check(CLI::IsMember(name_modes));

  // generate
  std::string split = "test";
  int max_new = 64;
  auto* gen_cmd = app.add_subcommand("generate", "Greedy-decode reports");
  gen_cmd->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--ckpt", ckpt_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--split", split, "Split to decode");
  gen_cmd->add_option("--study", study, "Decode a single study");
  gen_cmd->add_option("--max-new", max_new, "Token budget per report")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--out", out_path, "Output JSON (default stdout)");

  // eval
  std::string report_path;
  int samples = 500;
  auto* eval_cmd = app.add_subcommand("eval", "Generate and score reports with bootstrap CIs");
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--ckpt", ckpt_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--report", report_path, "Metrics JSON")->required();
  eval_cmd->add_option("--split", split, "Split to score");
  eval_cmd->add_option("--seed", seed, "Bootstrap seed");
  eval_cmd->add_option("--samples", samples, "Bootstrap samples")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-new", max_new, "Token budget per report")->check(CLI::NonNegativeNumber);

  som::IntensityPolicy policy;
  try {
    app.parse(argc, argv);
    if (som_cmd->parsed()) policy = parse_intensity(intensity);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      auto spec = synth::synth_spec_from_json(read_json(spec_path));
      if (seed) spec.seed = *seed;
      const auto m = dataset::generate_dataset(spec, out_dir, threads);
      log_event({{"event", "gen-data"}, {"studies", m.doc["studies"].size()}, {"out", out_dir}});
    } else if (som_cmd->parsed()) {
      som::MarkStyle style = som::parse_style(som_style);
      style.intensity = policy;
      const auto m = dataset::render_som_dataset(dataset::load_manifest(data_dir), style, !no_augment, out_dir);
      log_event({{"event", "render-som"}, {"studies", m.doc["studies"].size()}, {"out", out_dir}});
    } else if (tok_cmd->parsed()) {
      const auto records = dataset::load_studies(dataset::load_manifest(data_dir));
      const auto& r = find_study(records, study);
      runner::RunConfig cfg;
      std::unique_ptr<runner::Model> model;
      if (!ckpt_dir.empty()) {
        model = runner::load_run(ckpt_dir, cfg);
      } else {
        if (!config_path.empty()) cfg = runner::run_config_from_json(read_json(config_path));
        model = std::make_unique<runner::Model>(cfg.model, dataset::build_tokenizer(records));
      }
      json views = json::object();
      for (auto v : prompting::kAllViews) {
        const auto* vi = r.input.view(v);
        if (!vi) continue;
        const auto enc = model->encoder().encode_values(to_unit<float>(vi->image));
        json pairs = json::array();
        for (const auto& p : model->extractor().extract_tokens(enc, vi->masks, cfg.model.encoder.patch_size)) {
          std::vector<float> mt(p.mask_token.data(), p.mask_token.data() + p.mask_token.size());
          std::vector<float> st(p.spatial_token.data(), p.spatial_token.data() + p.spatial_token.size());
          pairs.push_back({{"structure", masks::structure_key(p.structure)}, {"mask_token", mt}, {"spatial_token", st}});
        }
        views[std::string(prompting::view_key(v))] = pairs;
      }
      write_json(out_path, {{"study", r.id}, {"views", views}});
    } else if (prompt_cmd->parsed()) {
      const auto records = dataset::load_studies(dataset::load_manifest(data_dir));
      const auto names = mask_names.empty() ? prompting::MaskNames::Default : *prompting::parse_mask_names(mask_names);
      const auto p = dataset::make_prompt(find_study(records, study), strategy_of(strategy), single_view, names);
      if (p.degraded_to_ns) log_event({{"event", "warning"}, {"message", "no positive masks; prompt uses the NS layout"}});
      write_json(out_path, prompting::to_json(p));
    } else if (train_cmd->parsed()) {
      auto cfg = runner::run_config_from_json(read_json(config_path));
      if (!strategy.empty()) cfg.train.strategy = strategy_of(strategy);
      if (seed) cfg.train.seed = *seed;
      if (single_view) cfg.train.single_view = true;
      if (multi_view) cfg.train.single_view = false;
      if (threads > 0) cfg.train.threads = threads;
      if (!mask_names.empty()) cfg.train.mask_names = *prompting::parse_mask_names(mask_names);
      const auto m = dataset::load_manifest(data_dir);
      const auto all = dataset::load_studies(m);
      const auto train = dataset::load_studies(m, "train");
      if (train.empty()) throw ContractError("dataset has no train split");
      const auto tokenizer = dataset::build_tokenizer(all);
      log_event({{"event", "train-start"},
                 {"studies", train.size()},
                 {"strategy", prompting::strategy_name(cfg.train.strategy)},
                 {"steps", mllm::total_steps(train.size(), cfg.train)}});
      auto run = runner::train_run(train, tokenizer, cfg, [](const mllm::StepLog& s) {
        if (s.step % 20 == 0) log_event({{"event", "step"}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}});
      });
      runner::save_run(out_dir, *run.model, cfg, run.result);
      log_event({{"event", "train-done"},
                 {"final_loss", run.result.curve.back().loss},
                 {"encoder_frozen", run.result.encoder_checksum_before == run.result.encoder_checksum_after},
                 {"out", out_dir}});
    } else if (gen_cmd->parsed() || eval_cmd->parsed()) {
      runner::RunConfig cfg;
      auto model = runner::load_run(ckpt_dir, cfg);
      auto records = dataset::load_studies(dataset::load_manifest(data_dir), study.empty() ? split : "");
      if (!study.empty()) records = {find_study(records, study)};
      if (records.empty()) throw ContractError("no studies in split '" + split + "'");
      const auto preds = runner::predict(*model, records, cfg.train.strategy, cfg.train.single_view, max_new,
                                             cfg.train.mask_names);
      if (gen_cmd->parsed()) {
        json out = json::array();
        for (const auto& p : preds) out.push_back({{"id", p.id}, {"generated", p.generated}, {"target", p.target}});
        write_json(out_path, out);
      } else {
        metrics::BootstrapSpec bs;
        bs.samples = samples;
        auto summary = runner::evaluate(preds, records, bs, seed.value_or(0));
        summary.report["strategy"] = prompting::strategy_name(cfg.train.strategy);
        summary.report["split"] = split;
        write_json(report_path, summary.report);
        log_event({{"event", "eval"}, {"n", preds.size()}, {"f1_mr_micro", summary.micro_f1}, {"bleu4", summary.corpus_bleu4}});
      }
    }
  } catch (const std::exception& e) {
    log_event({{"event", "error"}, {"message", e.what()}});
    return 1;
  }
  return 0;
}
