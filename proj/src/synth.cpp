#include "segprompt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace segprompt::synth {

using masks::BinaryMask;
using masks::MaskSet;
using prompting::View;

namespace {

struct Canvas {
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> px;
  int n;
  double s;  // scale relative to the 64-pixel reference layout

  explicit Canvas(int size, double background) : px(size, size), n(size), s(size / 64.0) { px.setConstant(background); }

  void fill(const BinaryMask& m, double value) {
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (m.at(r, c)) px(r, c) = value;
  }
  void add(const BinaryMask& m, double delta) {
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (m.at(r, c)) px(r, c) += delta;
  }
  // Values stay inside [8, 247] so drawn 0/255 marks always differ from the film.
  GrayImage finish(std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> noise(0.0, sigma);
    GrayImage out(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) out(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(px(r, c) + noise(rng)), 8L, 247L));
    return out;
  }
};

BinaryMask ellipse(int n, double cr, double cc, double rr, double rc) {
  BinaryMask m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double y = (r - cr) / rr;
      const double x = (c - cc) / rc;
      if (x * x + y * y <= 1.0) m.set(r, c);
    }
  return m;
}

void line(BinaryMask& m, int r0, int c0, int r1, int c1) {
  int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
  int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
  int err = dc - dr;
  while (true) {
    if (r0 >= 0 && c0 >= 0 && r0 < m.height() && c0 < m.width()) m.set(r0, c0);
    if (r0 == r1 && c0 == c1) break;
    const int e2 = 2 * err;
    if (e2 > -dr) {
      err -= dr;
      c0 += sc;
    }
    if (e2 < dc) {
      err += dc;
      r0 += sr;
    }
  }
}

BinaryMask polyline(int n, const std::vector<std::pair<double, double>>& pts) {
  BinaryMask m(n, n);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    line(m, static_cast<int>(std::lround(pts[i].first)), static_cast<int>(std::lround(pts[i].second)),
         static_cast<int>(std::lround(pts[i + 1].first)), static_cast<int>(std::lround(pts[i + 1].second)));
  return m;
}

BinaryMask subtract(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out = a;
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c)
      if (b.at(r, c)) out.set(r, c, false);
  return out;
}

BinaryMask morph(const BinaryMask& m, bool dilate) {
  BinaryMask out = m;
  const int h = m.height(), w = m.width();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      bool any = false, all = true;
      for (auto [dr, dc] : {std::pair{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int y = r + dr, x = c + dc;
        const bool v = y >= 0 && x >= 0 && y < h && x < w && m.at(y, x);
        any = any || v;
        all = all && v;
      }
      out.set(r, c, dilate ? any : all);
    }
  return out;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
bool coin(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

struct Frontal {
  prompting::ViewInput view;
  DrawnState state;
};

Frontal draw_frontal(const SynthSpec& spec, std::mt19937_64& rng) {
  const int n = spec.image_size;
  Canvas cv(n, 70.0);
  const double s = cv.s;
  Frontal out;
  out.view.masks = MaskSet(n, n);

  // Draw every random number in a fixed order regardless of which structures appear.
  std::map<StructureId, bool> present;
  for (StructureId id : masks::kAllStructures) present[id] = coin(rng, spec.structure_prob.count(id) ? spec.structure_prob.at(id) : 0.0);
  const bool effusion = coin(rng, spec.effusion_prob);
  const bool opacity = coin(rng, spec.opacity_prob);
  const double jr = uniform(rng, -2, 2), jc = uniform(rng, -2, 2);
  const double lung_rr = uniform(rng, 16, 20), lung_rc = uniform(rng, 8, 10);
  const double heart_rr = uniform(rng, 7, 11), heart_rc = uniform(rng, 8, 14);
  const double opa_r = uniform(rng, 20, 36), opa_c = uniform(rng, 0, 1) < 0.5 ? 20 : 44;
  std::array<double, 10> t{};
  for (auto& v : t) v = uniform(rng, -3, 3);

  auto S = [&](double v) { return v * s; };
  auto record = [&](StructureId id, BinaryMask m) {
    if (masks::is_positive(m)) out.view.masks.set(id, std::move(m));
  };

  const BinaryMask right_lung = ellipse(n, S(30 + jr), S(20 + jc), S(lung_rr), S(lung_rc));
  const BinaryMask left_lung = ellipse(n, S(30 + jr), S(44 + jc), S(lung_rr), S(lung_rc));
  if (present[StructureId::RightLung]) {
    cv.fill(right_lung, 30);
    record(StructureId::RightLung, right_lung);
  }
  if (present[StructureId::LeftLung]) {
    cv.fill(left_lung, 30);
    record(StructureId::LeftLung, left_lung);
  }
  if (present[StructureId::Heart]) {
    const BinaryMask heart = ellipse(n, S(42 + jr), S(34 + jc), S(heart_rr), S(heart_rc));
    cv.fill(heart, 170);
    out.state.cardiomegaly = static_cast<double>(heart.count()) > spec.cardiomegaly_area * s * s;
    record(StructureId::Heart, heart);
  }
  if (effusion) {
    BinaryMask band = ellipse(n, S(50 + jr), S(20 + jc), S(5), S(9));
    band = masks::mask_union(band, ellipse(n, S(50 + jr), S(44 + jc), S(5), S(9)));
    cv.fill(band, 150);
  }
  if (opacity) cv.fill(ellipse(n, S(opa_r + jr), S(opa_c + jc), S(4), S(4)), 140);
  if (present[StructureId::Pneumothorax]) {
    const BinaryMask outer = ellipse(n, S(18 + jr), S(20 + jc), S(7), S(9));
    const BinaryMask inner = ellipse(n, S(21 + jr), S(20 + jc), S(7), S(9));
    const BinaryMask crescent = subtract(outer, inner);
    cv.fill(crescent, 12);
    record(StructureId::Pneumothorax, crescent);
  }

  using P = std::vector<std::pair<double, double>>;
  const std::map<StructureId, P> tubes = {
      {StructureId::ETT, {{0, 32 + t[0]}, {16 + t[1], 32 + t[0]}}},
      {StructureId::NGT, {{0, 29 + t[2]}, {40, 30 + t[2]}, {54 + t[3], 38 + t[2]}}},
      {StructureId::CVC, {{6 + t[4], 8}, {14 + t[4], 20}, {24 + t[5], 30}}},
      {StructureId::SGC, {{8 + t[6], 58}, {20, 46}, {34 + t[7], 38}}},
      {StructureId::ChestTube, {{60, 58 + t[8] / 2}, {44, 54}, {30 + t[9], 48}}},
  };
  for (const auto& [id, pts] : tubes) {
    if (!present[id]) continue;
    P scaled;
    for (auto [r, c] : pts) scaled.emplace_back(S(r), S(c));
    const BinaryMask m = polyline(n, scaled);
    cv.add(m, spec.tube_contrast);
    record(id, m);
  }

  out.view.image = cv.finish(rng, 5.0);
  for (StructureId id : masks::kAllStructures)
    if (present[id]) out.state.structures.push_back(id);
  out.state.effusion = effusion;
  out.state.opacity = opacity;
  return out;
}

prompting::ViewInput draw_lateral(const SynthSpec& spec, const DrawnState& st, std::mt19937_64& rng) {
  const int n = spec.image_size;
  Canvas cv(n, 75.0);
  const double s = cv.s;
  auto S = [&](double v) { return v * s; };
  prompting::ViewInput v{{}, MaskSet(n, n)};
  const double jr = uniform(rng, -2, 2), jc = uniform(rng, -2, 2);
  auto record = [&](StructureId id, const BinaryMask& m) {
    if (masks::is_positive(m)) v.masks.set(id, m);
  };
  if (st.has(StructureId::RightLung)) {
    const BinaryMask m = ellipse(n, S(30 + jr), S(30 + jc), S(18), S(14));
    cv.fill(m, 35);
    record(StructureId::RightLung, m);
  }
  if (st.has(StructureId::LeftLung)) {
    const BinaryMask m = ellipse(n, S(31 + jr), S(34 + jc), S(18), S(14));
    cv.fill(m, 35);
    record(StructureId::LeftLung, m);
  }
  if (st.has(StructureId::Heart)) {
    const BinaryMask m = ellipse(n, S(42 + jr), S(22 + jc), st.cardiomegaly ? S(11) : S(8), st.cardiomegaly ? S(12) : S(9));
    cv.fill(m, 165);
    record(StructureId::Heart, m);
  }
  if (st.has(StructureId::ETT)) {
    const BinaryMask m = polyline(n, {{0, S(38 + jc)}, {S(16), S(38 + jc)}});
    cv.add(m, spec.tube_contrast);
    record(StructureId::ETT, m);
  }
  if (st.has(StructureId::NGT)) {
    const BinaryMask m = polyline(n, {{0, S(42 + jc)}, {S(54), S(40 + jc)}});
    cv.add(m, spec.tube_contrast);
    record(StructureId::NGT, m);
  }
  v.image = cv.finish(rng, 5.0);
  return v;
}

MaskSet add_noise(const MaskSet& gt, const MaskNoise& noise, std::mt19937_64& rng) {
  MaskSet out(gt.height(), gt.width());
  for (const auto& [id, m] : gt.all()) {
    const bool hit = coin(rng, noise.probability);
    if (!hit || noise.kind == NoiseKind::None) {
      out.set(id, m);
      continue;
    }
    switch (noise.kind) {
      case NoiseKind::Dilate: out.set(id, morph(m, true)); break;
      case NoiseKind::Erode: {
        BinaryMask e = morph(m, false);
        if (masks::is_positive(e)) out.set(id, std::move(e));  // an eroded-away tube counts as a dropped mask
        break;
      }
      case NoiseKind::Drop: break;
      case NoiseKind::None: break;
    }
  }
  return out;
}

const char* noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::Dilate: return "dilate";
    case NoiseKind::Erode: return "erode";
    case NoiseKind::Drop: return "drop";
    case NoiseKind::None: break;
  }
  return "none";
}

constexpr const char* kIndications[] = {"shortness of breath .", "chest pain .", "fever and cough .",
                                        "line placement .", "follow-up ."};

}  // namespace

bool DrawnState::has(StructureId id) const {
  return std::find(structures.begin(), structures.end(), id) != structures.end();
}

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json probs = nlohmann::json::object();
  for (const auto& [id, p] : s.structure_prob) probs[std::string(masks::structure_key(id))] = p;
  return {{"seed", s.seed},
          {"image_size", s.image_size},
          {"studies", s.studies},
          {"structure_prob", probs},
          {"effusion_prob", s.effusion_prob},
          {"opacity_prob", s.opacity_prob},
          {"prior_prob", s.prior_prob},
          {"lateral_prob", s.lateral_prob},
          {"cardiomegaly_area", s.cardiomegaly_area},
          {"tube_contrast", s.tube_contrast},
          {"tube_sentence", s.tube_sentence},
          {"heart_sentence", s.heart_sentence},
          {"splits", s.splits},
          {"mask_noise", {{"kind", noise_name(s.noise.kind)}, {"probability", s.noise.probability}}}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.seed = j.value("seed", s.seed);
  s.image_size = j.value("image_size", s.image_size);
  s.studies = j.value("studies", s.studies);
  if (j.contains("structure_prob")) {
    for (const auto& [key, p] : j.at("structure_prob").items()) {
      auto id = masks::parse_structure(key);
      if (!id) throw ContractError("synth spec: unknown structure " + key);
      s.structure_prob[*id] = p.get<double>();
    }
  }
  s.effusion_prob = j.value("effusion_prob", s.effusion_prob);
  s.opacity_prob = j.value("opacity_prob", s.opacity_prob);
  s.prior_prob = j.value("prior_prob", s.prior_prob);
  s.lateral_prob = j.value("lateral_prob", s.lateral_prob);
  s.cardiomegaly_area = j.value("cardiomegaly_area", s.cardiomegaly_area);
  s.tube_contrast = j.value("tube_contrast", s.tube_contrast);
  s.tube_sentence = j.value("tube_sentence", s.tube_sentence);
  s.heart_sentence = j.value("heart_sentence", s.heart_sentence);
  s.splits = j.value("splits", s.splits);
  if (j.contains("mask_noise")) {
    const auto& mn = j.at("mask_noise");
    const std::string kind = mn.value("kind", std::string("none"));
    if (kind == "none") s.noise.kind = NoiseKind::None;
    else if (kind == "dilate") s.noise.kind = NoiseKind::Dilate;
    else if (kind == "erode") s.noise.kind = NoiseKind::Erode;
    else if (kind == "drop") s.noise.kind = NoiseKind::Drop;
    else throw ContractError("synth spec: unknown mask noise '" + kind + "'");
    s.noise.probability = mn.value("probability", 0.0);
  }

  auto prob = [](double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("synth spec: " + what + " = " + std::to_string(p) + " is not in [0,1]");
  };
  for (const auto& [id, p] : s.structure_prob) prob(p, std::string(masks::structure_key(id)));
  prob(s.effusion_prob, "effusion_prob");
  prob(s.opacity_prob, "opacity_prob");
  prob(s.prior_prob, "prior_prob");
  prob(s.lateral_prob, "lateral_prob");
  prob(s.noise.probability, "mask_noise.probability");
  if (s.image_size < 16 || s.image_size % 16 != 0)
    throw ContractError("synth spec: image_size must be a positive multiple of 16, got " + std::to_string(s.image_size));
  if (s.studies < 1) throw ContractError("synth spec: studies must be positive");
  const double total = s.splits[0] + s.splits[1] + s.splits[2];
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("synth spec: split fractions must sum to 1");
  return s;
}

std::string findings_text(const DrawnState& s, const SynthSpec& spec) {
  std::vector<std::string> out;
  if (spec.tube_sentence) {
    if (s.has(StructureId::ETT)) out.emplace_back("an endotracheal tube is in place .");
    if (s.has(StructureId::NGT)) out.emplace_back("a nasogastric tube is in place .");
    if (s.has(StructureId::CVC)) out.emplace_back("a central venous catheter is in place .");
    if (s.has(StructureId::SGC)) out.emplace_back("a swan-ganz catheter is in place .");
    if (s.has(StructureId::ChestTube)) out.emplace_back("a chest tube is in place .");
  }
  if (spec.heart_sentence && s.has(StructureId::Heart))
    out.emplace_back(s.cardiomegaly ? "the heart is enlarged ." : "heart size is normal .");
  if (s.has(StructureId::Pneumothorax)) out.emplace_back("there is a pneumothorax .");
  if (s.effusion) out.emplace_back("there is a pleural effusion .");
  if (s.opacity) out.emplace_back("there is a lung opacity .");
  const bool lungs = s.has(StructureId::LeftLung) || s.has(StructureId::RightLung);
  if (lungs && !s.has(StructureId::Pneumothorax) && !s.effusion && !s.opacity) out.emplace_back("the lungs are clear .");
  if (out.empty()) return "no findings .";
  std::string text;
  for (const auto& sentence : out) text += (text.empty() ? "" : " ") + sentence;
  return text;
}

metrics::LabelVector label_report(const std::string& text) {
  using metrics::Finding;
  metrics::LabelVector v{{metrics::kMaskRelevantFindings.begin(), metrics::kMaskRelevantFindings.end()}, {}};
  const auto words = mllm::Tokenizer::split(text);
  auto has = [&](const char* w) { return std::find(words.begin(), words.end(), w) != words.end(); };
  for (Finding f : v.findings) {
    bool on = false;
    switch (f) {
      case Finding::LungOpacity: on = has("opacity"); break;
      case Finding::Cardiomegaly: on = has("enlarged"); break;
      case Finding::Pneumothorax: on = has("pneumothorax"); break;
      case Finding::SupportDevices: on = has("tube") || has("catheter"); break;
      case Finding::PleuralEffusion: on = has("effusion"); break;
    }
    v.values.push_back(on ? 1 : 0);
  }
  return v;
}

std::uint64_t study_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string study_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "s" + digits;
}

std::vector<std::string> assign_splits(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x5EEDULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  std::vector<std::string> out(n, "test");
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_train) out[order[k]] = "train";
    else if (k < n_train + n_val) out[order[k]] = "val";
  }
  return out;
}

SyntheticStudy draw_study(const SynthSpec& spec, std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  SyntheticStudy out;
  out.input.id = id;
  Frontal frontal = draw_frontal(spec, rng);
  out.state = frontal.state;
  out.gt_masks[View::CurrentFrontal] = frontal.view.masks;
  out.input.frontal = std::move(frontal.view);
  out.input.target = findings_text(out.state, spec);

  const bool lateral = coin(rng, spec.lateral_prob);
  const bool prior = coin(rng, spec.prior_prob);
  const std::size_t indication = std::uniform_int_distribution<std::size_t>(0, std::size(kIndications) - 1)(rng);
  if (lateral) {
    out.input.lateral = draw_lateral(spec, out.state, rng);
    out.gt_masks[View::CurrentLateral] = out.input.lateral->masks;
  }
  if (prior) {
    Frontal p = draw_frontal(spec, rng);
    out.input.context.prior_report = findings_text(p.state, spec);
    out.gt_masks[View::PriorFrontal] = p.view.masks;
    out.input.prior = std::move(p.view);
  }
  out.input.context.indication = kIndications[indication];
  out.input.context.technique = lateral ? "frontal and lateral views of the chest ." : "single frontal view of the chest .";
  if (prior) out.input.context.comparison = "comparison is made with the prior study .";

  if (spec.noise.kind != NoiseKind::None && spec.noise.probability > 0) {
    out.input.frontal.masks = add_noise(out.input.frontal.masks, spec.noise, rng);
    if (out.input.lateral) out.input.lateral->masks = add_noise(out.input.lateral->masks, spec.noise, rng);
    if (out.input.prior) out.input.prior->masks = add_noise(out.input.prior->masks, spec.noise, rng);
  }
  return out;
}

}  // namespace segprompt::synth
