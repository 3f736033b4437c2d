#pragma once

// Set-of-marks rendering: contours and numeric marks stamped onto grayscale
// images, plus the mark listing appended to the prompt.

#include "segprompt/image.hpp"
#include "segprompt/masks.hpp"
#include "segprompt/prompting.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace segprompt::som {

using masks::BinaryMask;
using masks::MaskSet;
using masks::StructureId;

enum class IntensityKind { Alternating, ContrastMax, Uniform };

struct IntensityPolicy {
  IntensityKind kind = IntensityKind::ContrastMax;
  std::uint8_t value = 255;  // used by Uniform
};

struct MarkStyle {
  bool contours = true;
  bool alphanumerics = true;
  IntensityPolicy intensity;
};

struct LegendEntry {
  std::string label;  // "1", "2", ...
  StructureId structure;
  std::uint8_t intensity;
  bool operator==(const LegendEntry&) const = default;
};

struct Overlay {
  GrayImage image;
  std::vector<LegendEntry> legend;
  BinaryMask footprint;  // every pixel that was drawn
};

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

/// 5×7 bitmap for a decimal digit; bit 4 of each row is the leftmost column.
const std::array<std::uint8_t, kGlyphHeight>& digit_glyph(int digit);

/// Pixel footprint of `label` rendered with its top-left corner at (top, left), clipped to h×w.
BinaryMask glyph_footprint(const std::string& label, int top, int left, int h, int w);

/// Top-left corner of the mark for a mask: centered on the largest component's centroid, clamped inside the image.
std::pair<int, int> mark_anchor(const BinaryMask& m, const std::string& label);

std::vector<std::uint8_t> assign_intensities(const GrayImage& image, const std::vector<BinaryMask>& positives,
                                             const IntensityPolicy& policy);

Overlay render_overlay(const GrayImage& image, const MaskSet& ms, const MarkStyle& style);

/// Appends the "mark <k>: <structure>" listing after the instruction.
prompting::Prompt augment_som_prompt(const prompting::Prompt& base, const std::vector<LegendEntry>& legend,
                                     prompting::View view = prompting::View::CurrentFrontal);

nlohmann::json legend_to_json(const std::vector<LegendEntry>& legend);
std::vector<LegendEntry> legend_from_json(const nlohmann::json& j);

/// Parses "contours", "marks", "contours+marks".
MarkStyle parse_style(const std::string& spec);

}  // namespace segprompt::som
