#include "segprompt/dataset.hpp"

#include "segprompt/training.hpp"

#include <fstream>
#include <thread>

namespace segprompt::dataset {

using masks::MaskSet;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

json write_masks(const fs::path& root, const std::string& rel_dir, const std::string& prefix, const MaskSet& ms) {
  json out = json::object();
  for (const auto& [id, m] : ms.all()) {
    const std::string rel = rel_dir + "/" + prefix + "_" + std::string(masks::structure_key(id)) + ".pgm";
    masks::save_mask_pgm(root / rel, m);
    out[std::string(masks::structure_key(id))] = rel;
  }
  return out;
}

MaskSet read_masks(const fs::path& root, const json& entries, int h, int w) {
  MaskSet ms(h, w);
  for (const auto& [key, rel] : entries.items()) {
    auto id = masks::parse_structure(key);
    if (!id) throw IoError("manifest: unknown structure " + key);
    ms.set(*id, masks::load_mask_pgm(root / rel.get<std::string>()));
  }
  return ms;
}

json context_json(const prompting::TextualContext& c) {
  json out = json::object();
  if (c.prior_report) out["prior_report"] = *c.prior_report;
  if (c.indication) out["indication"] = *c.indication;
  if (c.technique) out["technique"] = *c.technique;
  if (c.comparison) out["comparison"] = *c.comparison;
  return out;
}

prompting::TextualContext context_from(const json& j) {
  prompting::TextualContext c;
  auto get = [&](const char* key, std::optional<std::string>& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::string>();
  };
  get("prior_report", c.prior_report);
  get("indication", c.indication);
  get("technique", c.technique);
  get("comparison", c.comparison);
  return c;
}

json write_study(const fs::path& root, const synth::SyntheticStudy& s, const std::string& split, bool keep_gt) {
  const std::string rel_dir = "studies/" + s.input.id;
  make_dirs(root / rel_dir);
  json views = json::object();
  for (View v : prompting::kAllViews) {
    const auto* view = s.input.view(v);
    if (!view) continue;
    const std::string key(prompting::view_key(v));
    const std::string image_rel = rel_dir + "/" + key + ".pgm";
    save_pgm(root / image_rel, view->image);
    json entry = {{"image", image_rel}, {"masks", write_masks(root, rel_dir, key, view->masks)}};
    if (keep_gt) entry["gt_masks"] = write_masks(root, rel_dir, key + "_gt", s.gt_masks.at(v));
    views[key] = entry;
  }
  return {{"id", s.input.id},
          {"split", split},
          {"views", views},
          {"context", context_json(s.input.context)},
          {"target", s.input.target}};
}

}  // namespace

Manifest generate_dataset(const synth::SynthSpec& spec, const fs::path& out_dir, int threads) {
  make_dirs(out_dir);
  const auto n = static_cast<std::size_t>(spec.studies);
  const auto splits = synth::assign_splits(n, spec.splits, spec.seed);
  const bool keep_gt = spec.noise.kind != synth::NoiseKind::None && spec.noise.probability > 0;

  std::vector<json> entries(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      const auto study = synth::draw_study(spec, synth::study_seed(spec.seed, i), synth::study_id(i));
      entries[i] = write_study(out_dir, study, splits[i], keep_gt);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min<int>(mllm::worker_threads(threads), static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers)) work(i);
    });
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(workers)) work(i);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Manifest m{out_dir, {{"version", 1},
                       {"image_size", spec.image_size},
                       {"spec", synth::to_json(spec)},
                       {"som", nullptr},
                       {"studies", entries}}};
  save_manifest(m);
  return m;
}

Manifest load_manifest(const fs::path& dir) {
  Manifest m{dir, read_json(dir / "manifest.json")};
  if (!m.doc.contains("studies") || !m.doc.at("studies").is_array())
    throw IoError((dir / "manifest.json").string() + ": no studies array");
  return m;
}

void save_manifest(const Manifest& m) {
  make_dirs(m.dir);
  write_text(m.dir / "manifest.json", m.doc.dump(2) + "\n");
}

std::vector<StudyRecord> load_studies(const Manifest& m, const std::string& split) {
  const bool som_prompts = m.doc.contains("som") && m.doc.at("som").is_object() &&
                           m.doc.at("som").value("augment_prompts", false);
  std::vector<StudyRecord> out;
  for (const auto& e : m.doc.at("studies")) {
    if (!split.empty() && e.at("split").get<std::string>() != split) continue;
    StudyRecord r;
    r.id = e.at("id").get<std::string>();
    r.split = e.at("split").get<std::string>();
    r.som_prompts = som_prompts;
    r.input.id = r.id;
    r.input.target = e.value("target", std::string());
    if (e.contains("context")) r.input.context = context_from(e.at("context"));
    for (const auto& [key, v] : e.at("views").items()) {
      auto view = prompting::parse_view(key);
      if (!view) throw IoError("manifest: unknown view " + key);
      prompting::ViewInput vi;
      vi.image = load_pgm(m.dir / v.at("image").get<std::string>());
      const int h = static_cast<int>(vi.image.rows()), w = static_cast<int>(vi.image.cols());
      vi.masks = read_masks(m.dir, v.value("masks", json::object()), h, w);
      // Exact masks win over the (possibly noisy) masks burnt into an overlay.
      if (v.contains("eval_masks")) r.eval_masks[*view] = read_masks(m.dir, v.at("eval_masks"), h, w);
      if (v.contains("gt_masks")) r.eval_masks[*view] = read_masks(m.dir, v.at("gt_masks"), h, w);
      if (v.contains("legend")) r.legends[*view] = som::legend_from_json(v.at("legend"));
      switch (*view) {
        case View::CurrentFrontal: r.input.frontal = std::move(vi); break;
        case View::CurrentLateral: r.input.lateral = std::move(vi); break;
        case View::PriorFrontal: r.input.prior = std::move(vi); break;
      }
    }
    if (r.input.frontal.image.size() == 0) throw IoError("manifest: study " + r.id + " has no current frontal view");
    out.push_back(std::move(r));
  }
  return out;
}

StudyRecord to_record(const synth::SyntheticStudy& s, const std::string& split) {
  StudyRecord r;
  r.id = s.input.id;
  r.split = split;
  r.input = s.input;
  r.eval_masks = s.gt_masks;
  return r;
}

prompting::Prompt make_prompt(const StudyRecord& r, prompting::Strategy strategy, bool single_view,
                              prompting::MaskNames names) {
  prompting::Prompt p = prompting::build_prompt(r.input, strategy, single_view, names);
  if (!r.som_prompts) return p;
  for (View v : prompting::kAllViews) {
    if (single_view && v != View::CurrentFrontal) continue;
    if (!r.input.view(v)) continue;
    auto it = r.legends.find(v);
    if (it != r.legends.end()) p = som::augment_som_prompt(p, it->second, v);
  }
  return p;
}

mllm::Tokenizer build_tokenizer(const std::vector<StudyRecord>& records) {
  using namespace prompting;
  std::vector<std::string> corpus = {std::string(templates::kSystem),       std::string(templates::kFrontalLead),
                                     std::string(templates::kLateralLead),  std::string(templates::kPriorLead),
                                     std::string(templates::kInstruction),  std::string(templates::kInstructionWithPrior),
                                     std::string(templates::kMaskHint),     "prior report: indication: technique: comparison:",
                                     "mask masks mark 0 1 2 3 4 5 6 7 8 9 , ."};
  for (View v : kAllViews)
    for (StructureId id : masks::kAllStructures) corpus.push_back(structure_label(v, id));
  for (const auto& r : records) {
    corpus.push_back(r.input.target);
    const auto& c = r.input.context;
    for (const auto* s : {&c.prior_report, &c.indication, &c.technique, &c.comparison})
      if (*s) corpus.push_back(**s);
  }
  return mllm::Tokenizer::build(corpus);
}

Manifest render_som_dataset(const Manifest& src, const som::MarkStyle& style, bool augment_prompts,
                            const fs::path& out_dir) {
  make_dirs(out_dir);
  Manifest out{out_dir, src.doc};
  json& studies = out.doc["studies"];
  for (auto& e : studies) {
    const std::string id = e.at("id").get<std::string>();
    const std::string rel_dir = "studies/" + id;
    make_dirs(out_dir / rel_dir);
    for (auto& [key, v] : e.at("views").items()) {
      const GrayImage image = load_pgm(src.dir / v.at("image").get<std::string>());
      const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
      const MaskSet ms = read_masks(src.dir, v.value("masks", json::object()), h, w);
      const som::Overlay overlay = som::render_overlay(image, ms, style);

      const std::string image_rel = rel_dir + "/" + key + ".pgm";
      save_pgm(out_dir / image_rel, overlay.image);
      const json legend = som::legend_to_json(overlay.legend);
      write_text(out_dir / rel_dir / (key + "_legend.json"), legend.dump(2) + "\n");

      json entry = {{"image", image_rel},
                    {"masks", json::object()},
                    {"eval_masks", write_masks(out_dir, rel_dir, key, ms)},
                    {"legend", legend}};
      if (v.contains("gt_masks"))
        entry["gt_masks"] = write_masks(out_dir, rel_dir, key + "_gt",
                                        read_masks(src.dir, v.at("gt_masks"), h, w));
      v = entry;
    }
  }
  out.doc["som"] = {{"contours", style.contours},
                    {"alphanumerics", style.alphanumerics},
                    {"augment_prompts", augment_prompts}};
  save_manifest(out);
  return out;
}

}  // namespace segprompt::dataset
