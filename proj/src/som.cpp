#include "segprompt/som.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace segprompt::som {

namespace {

constexpr std::array<std::array<std::uint8_t, kGlyphHeight>, 10> kDigits = {{
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},
    {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},
}};

int label_width(const std::string& label) {
  const int n = static_cast<int>(label.size());
  return n * kGlyphWidth + std::max(0, n - 1);
}

}  // namespace

const std::array<std::uint8_t, kGlyphHeight>& digit_glyph(int digit) {
  nn::require(digit >= 0 && digit <= 9, "digit_glyph: not a decimal digit");
  return kDigits[static_cast<std::size_t>(digit)];
}

BinaryMask glyph_footprint(const std::string& label, int top, int left, int h, int w) {
  BinaryMask out(h, w);
  for (std::size_t k = 0; k < label.size(); ++k) {
    nn::require(label[k] >= '0' && label[k] <= '9', "glyph_footprint: marks are numeric");
    const auto& glyph = digit_glyph(label[k] - '0');
    const int x0 = left + static_cast<int>(k) * (kGlyphWidth + 1);
    for (int r = 0; r < kGlyphHeight; ++r)
      for (int c = 0; c < kGlyphWidth; ++c) {
        if (((glyph[static_cast<std::size_t>(r)] >> (kGlyphWidth - 1 - c)) & 1U) == 0) continue;
        const int y = top + r;
        const int x = x0 + c;
        if (y >= 0 && x >= 0 && y < h && x < w) out.set(y, x);
      }
  }
  return out;
}

std::pair<int, int> mark_anchor(const BinaryMask& m, const std::string& label) {
  const auto comps = masks::connected_components(m);
  nn::require(!comps.empty(), "mark_anchor: mask is empty");
  const auto [cr, cc] = masks::centroid(comps.front());
  const int width = label_width(label);
  int top = static_cast<int>(std::lround(cr)) - kGlyphHeight / 2;
  int left = static_cast<int>(std::lround(cc)) - (width - 1) / 2;
  top = std::clamp(top, 0, std::max(0, m.height() - kGlyphHeight));
  left = std::clamp(left, 0, std::max(0, m.width() - width));
  return {top, left};
}

std::vector<std::uint8_t> assign_intensities(const GrayImage& image, const std::vector<BinaryMask>& positives,
                                             const IntensityPolicy& policy) {
  std::vector<std::uint8_t> out;
  out.reserve(positives.size());
  for (std::size_t k = 0; k < positives.size(); ++k) {
    switch (policy.kind) {
      case IntensityKind::Alternating:
        out.push_back(k % 2 == 0 ? 255 : 0);
        break;
      case IntensityKind::Uniform:
        out.push_back(policy.value);
        break;
      case IntensityKind::ContrastMax: {
        const BinaryMask edge = masks::contour(positives[k]);
        nn::require(edge.height() == image.rows() && edge.width() == image.cols(),
                    "assign_intensities: mask and image extents differ");
        double sum = 0;
        std::int64_t n = 0;
        for (int r = 0; r < edge.height(); ++r)
          for (int c = 0; c < edge.width(); ++c)
            if (edge.at(r, c)) {
              sum += image(r, c);
              ++n;
            }
        const double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
        out.push_back(std::abs(0.0 - mean) > std::abs(255.0 - mean) ? 0 : 255);
        break;
      }
    }
  }
  return out;
}

Overlay render_overlay(const GrayImage& image, const MaskSet& ms, const MarkStyle& style) {
  nn::require(ms.empty() || (ms.height() == image.rows() && ms.width() == image.cols()),
              "render_overlay: masks are " + std::to_string(ms.height()) + "x" + std::to_string(ms.width()) +
                  ", image is " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  Overlay out{image, {}, BinaryMask(h, w)};

  const auto ids = ms.positives();
  if (ids.empty()) return out;
  std::vector<BinaryMask> positives;
  for (StructureId id : ids) positives.push_back(*ms.find(id));
  const auto intensities = assign_intensities(image, positives, style.intensity);

  auto paint = [&](const BinaryMask& m, std::uint8_t value) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (m.at(r, c)) {
          out.image(r, c) = value;
          out.footprint.set(r, c);
        }
  };

  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::string label = std::to_string(k + 1);
    if (style.contours) paint(masks::contour(positives[k]), intensities[k]);
    if (style.alphanumerics) {
      const auto [top, left] = mark_anchor(positives[k], label);
      paint(glyph_footprint(label, top, left, h, w), intensities[k]);
    }
    out.legend.push_back({label, ids[k], intensities[k]});
  }
  return out;
}

prompting::Prompt augment_som_prompt(const prompting::Prompt& base, const std::vector<LegendEntry>& legend,
                                     prompting::View view) {
  if (legend.empty()) return base;
  std::string listing;
  for (const auto& e : legend) {
    if (!listing.empty()) listing += "\n";
    listing += "mark " + e.label + ": " + prompting::structure_label(view, e.structure);
  }
  prompting::Prompt out = base;
  auto it = std::find_if(out.segments.begin(), out.segments.end(), [](const prompting::PromptSegment& s) {
    const auto* t = std::get_if<prompting::TextSpan>(&s);
    return t && t->role == prompting::TextRole::Instruction;
  });
  // Insert after the instruction and any listings already appended for earlier views.
  if (it != out.segments.end()) ++it;
  while (it != out.segments.end()) {
    const auto* t = std::get_if<prompting::TextSpan>(&*it);
    if (!t || t->role != prompting::TextRole::MarkList) break;
    ++it;
  }
  out.segments.insert(it, prompting::TextSpan{listing, prompting::TextRole::MarkList});
  return out;
}

nlohmann::json legend_to_json(const std::vector<LegendEntry>& legend) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : legend)
    j.push_back({{"label", e.label}, {"structure", masks::structure_key(e.structure)}, {"intensity", e.intensity}});
  return j;
}

std::vector<LegendEntry> legend_from_json(const nlohmann::json& j) {
  std::vector<LegendEntry> out;
  for (const auto& e : j) {
    auto id = masks::parse_structure(e.at("structure").get<std::string>());
    if (!id) throw ContractError("legend: unknown structure " + e.at("structure").get<std::string>());
    out.push_back({e.at("label").get<std::string>(), *id, e.at("intensity").get<std::uint8_t>()});
  }
  return out;
}

MarkStyle parse_style(const std::string& spec) {
  MarkStyle s;
  s.contours = spec.find("contours") != std::string::npos;
  s.alphanumerics = spec.find("marks") != std::string::npos;
  if (!s.contours && !s.alphanumerics)
    throw ContractError("som style '" + spec + "' draws nothing; use contours, marks or contours+marks");
  return s;
}

}  // namespace segprompt::som
