#include "segprompt/runner.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace segprompt::runner {

using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = mllm::model_config_from_json(j.at("model"));
  c.train = mllm::train_config_from_json(j.contains("train") ? j.at("train") : j);
  return c;
}

json to_json(const RunConfig& c) { return {{"model", mllm::to_json(c.model)}, {"train", mllm::to_json(c.train)}}; }

std::vector<Prepared> prepare_all(Model& model, const std::vector<dataset::StudyRecord>& records,
                                  prompting::Strategy strategy, bool single_view, prompting::MaskNames names) {
  std::vector<Prepared> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(model.prepare(r.input, dataset::make_prompt(r, strategy, single_view, names)));
  return out;
}

TrainedRun train_run(const std::vector<dataset::StudyRecord>& train, const mllm::Tokenizer& tokenizer,
                     const RunConfig& cfg, const std::function<void(const mllm::StepLog&)>& on_step) {
  TrainedRun run;
  run.model = std::make_unique<Model>(cfg.model, tokenizer);
  const auto data = prepare_all(*run.model, train, cfg.train.strategy, cfg.train.single_view, cfg.train.mask_names);
  run.result = mllm::train(*run.model, data, cfg.train, on_step);
  return run;
}

void save_run(const fs::path& dir, Model& model, const RunConfig& cfg, const mllm::TrainResult& result) {
  model.save(dir);
  RunConfig echo = cfg;
  echo.model = model.config();
  write_text(dir / "config.json", to_json(echo).dump(2) + "\n");
  write_text(dir / "tokenizer.json", model.tokenizer().to_json().dump(2) + "\n");
  std::ostringstream csv;
  csv << "step,lr,loss\n" << std::setprecision(9);
  for (const auto& s : result.curve) csv << s.step << "," << s.lr << "," << s.loss << "\n";
  write_text(dir / "loss.csv", csv.str());
}

std::unique_ptr<Model> load_run(const fs::path& dir, RunConfig& cfg) {
  cfg = run_config_from_json(read_json(dir / "config.json"));
  auto tokenizer = mllm::Tokenizer::from_json(read_json(dir / "tokenizer.json"));
  auto model = std::make_unique<Model>(cfg.model, std::move(tokenizer));
  model->load_weights(dir / "model.ckpt");
  return model;
}

std::vector<Prediction> predict(Model& model, const std::vector<dataset::StudyRecord>& records,
                                prompting::Strategy strategy, bool single_view, int max_new,
                                prompting::MaskNames names) {
  std::vector<Prediction> out;
  for (const auto& r : records) {
    const auto ps = model.prepare(r.input, dataset::make_prompt(r, strategy, single_view, names));
    out.push_back({r.id, model.tokenizer().decode(model.generate(ps, max_new)), r.input.target});
  }
  return out;
}

EvalSummary evaluate(const std::vector<Prediction>& predictions, const std::vector<dataset::StudyRecord>& records,
                     const metrics::BootstrapSpec& spec, std::uint64_t seed) {
  nn::require(!predictions.empty(), "evaluate: no predictions");
  const std::size_t n = predictions.size();
  std::vector<std::vector<std::string>> cands, refs;
  std::vector<double> bleu, rouge;
  std::vector<metrics::LabelVector> pred_labels, gt_labels;
  for (const auto& p : predictions) {
    cands.push_back(mllm::Tokenizer::split(p.generated));
    refs.push_back(mllm::Tokenizer::split(p.target));
    bleu.push_back(metrics::bleu(cands.back(), refs.back()));
    rouge.push_back(metrics::rouge_l(cands.back(), refs.back()));
    pred_labels.push_back(synth::label_report(p.generated));
    gt_labels.push_back(synth::label_report(p.target));
  }

  const json base = {{"bootstrap_samples", spec.samples},
                     {"interval", spec.interval},
                     {"statistic", "median of the bootstrap distribution"},
                     {"percentiles", "linear interpolation"},
                     {"seed", seed}};
  auto with = [&](json extra) {
    json c = base;
    c.update(extra);
    return c;
  };

  auto f1_stat = [&](bool micro) {
    return [&, micro](const std::vector<std::size_t>& idx) {
      std::vector<metrics::LabelVector> p, g;
      for (auto i : idx) {
        p.push_back(pred_labels[i]);
        g.push_back(gt_labels[i]);
      }
      const auto r = metrics::macro_micro_f1(p, g);
      return micro ? r.micro : r.macro;
    };
  };

  EvalSummary s;
  const auto f1 = metrics::macro_micro_f1(pred_labels, gt_labels);
  s.micro_f1 = f1.micro;
  s.macro_f1 = f1.macro;
  s.corpus_bleu4 = metrics::corpus_bleu(cands, refs);

  json m = json::object();
  m["bleu4"] = metrics::to_json(metrics::bootstrap_ci(bleu, spec, seed),
                                with({{"variant", "sentence BLEU-4, no smoothing, per-sample mean"}}));
  m["rouge_l"] = metrics::to_json(metrics::bootstrap_ci(rouge, spec, seed), with({{"beta", metrics::kRougeBeta}}));
  const json f1_conv = {{"findings", "Lung Opacity, Cardiomegaly, Pneumothorax, Support Devices, Pleural Effusion"},
                        {"zero_denominator", 0}};
  m["f1_mr_macro"] = metrics::to_json(metrics::bootstrap(n, f1_stat(false), spec, seed), with(f1_conv));
  m["f1_mr_micro"] = metrics::to_json(metrics::bootstrap(n, f1_stat(true), spec, seed), with(f1_conv));

  // Input masks scored against evaluation masks (meaningful under mask noise).
  std::vector<double> dice, cl;
  for (const auto& r : records) {
    for (const auto& [view, gt] : r.eval_masks) {
      if (r.legends.count(view)) continue;  // SoM: the model never saw these masks as inputs
      const auto* vi = r.input.view(view);
      if (!vi) continue;
      const masks::BinaryMask empty(gt.height(), gt.width());
      for (masks::StructureId id : masks::kAllStructures) {
        const auto* pm = vi->masks.find(id);
        const auto* gm = gt.find(id);
        if (!pm && !gm) continue;
        const auto& a = pm ? *pm : empty;
        const auto& b = gm ? *gm : empty;
        if (auto d = metrics::dice(a, b)) dice.push_back(*d);
        if (masks::is_tubular(id))
          if (auto c = metrics::cl_dice(a, b)) cl.push_back(*c);
      }
    }
  }
  if (!dice.empty()) m["dice"] = metrics::to_json(metrics::bootstrap_ci(dice, spec, seed), with({{"aggregation", "positives only"}}));
  if (!cl.empty())
    m["cl_dice"] = metrics::to_json(metrics::bootstrap_ci(cl, spec, seed),
                                    with({{"aggregation", "positives only, tubular structures"}, {"skeleton", "Zhang-Suen"}}));

  json per = json::object();
  for (std::size_t k = 0; k < metrics::kMaskRelevantFindings.size(); ++k)
    per[std::string(metrics::finding_name(metrics::kMaskRelevantFindings[k]))] = f1.per_finding[k];

  json preds = json::array();
  for (const auto& p : predictions) preds.push_back({{"id", p.id}, {"generated", p.generated}, {"target", p.target}});

  s.report = {{"n", n},
              {"metrics", m},
              {"point", {{"corpus_bleu4", s.corpus_bleu4},
                         {"f1_mr_micro", s.micro_f1},
                         {"f1_mr_macro", s.macro_f1},
                         {"mean_bleu4", mean(bleu)},
                         {"mean_rouge_l", mean(rouge)}}},
              {"per_finding_f1", per},
              {"predictions", preds}};
  return s;
}

}  // namespace segprompt::runner
