#pragma once

#include "segprompt/nn/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace segprompt::masks {

/// Segmented structures: anatomical, then support devices, then pathological.
enum class StructureId : int { LeftLung, RightLung, Heart, CVC, ETT, NGT, SGC, ChestTube, Pneumothorax };

inline constexpr std::array<StructureId, 9> kAllStructures = {
    StructureId::LeftLung, StructureId::RightLung, StructureId::Heart,     StructureId::CVC,         StructureId::ETT,
    StructureId::NGT,      StructureId::SGC,       StructureId::ChestTube, StructureId::Pneumothorax};

/// Identifier used in JSON and file names, e.g. "LeftLung".
std::string_view structure_key(StructureId id);
/// Lowercase English name used in prompts, e.g. "left lung".
std::string_view structure_name(StructureId id);
std::optional<StructureId> parse_structure(std::string_view key);
bool is_tubular(StructureId id);

using PixelArray = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pixel mask with values in {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);
  /// Any nonzero entry becomes 1.
  static BinaryMask from_pixels(const PixelArray& pixels);

  int height() const { return static_cast<int>(pixels_.rows()); }
  int width() const { return static_cast<int>(pixels_.cols()); }
  bool at(int r, int c) const { return pixels_(r, c) != 0; }
  void set(int r, int c, bool on = true) { pixels_(r, c) = on ? 1 : 0; }
  const PixelArray& pixels() const { return pixels_; }
  std::int64_t count() const { return pixels_.cast<std::int64_t>().sum(); }
  bool same_extents(const BinaryMask& o) const { return height() == o.height() && width() == o.width(); }

  bool operator==(const BinaryMask& o) const { return same_extents(o) && (pixels_ == o.pixels_).all(); }

 private:
  PixelArray pixels_;
};

/// A mask resampled onto the encoder's patch lattice.
struct GridMask {
  BinaryMask cells;
  int rows() const { return cells.height(); }
  int cols() const { return cells.width(); }
};

/// Per-structure masks of one image view; all masks share the view's extents.
class MaskSet {
 public:
  MaskSet() = default;
  MaskSet(int height, int width) : height_(height), width_(width) {}

  void set(StructureId id, BinaryMask m);
  void erase(StructureId id) { masks_.erase(id); }
  const BinaryMask* find(StructureId id) const;
  bool contains(StructureId id) const { return masks_.count(id) != 0; }
  bool empty() const { return masks_.empty(); }
  int height() const { return height_; }
  int width() const { return width_; }

  /// Structures with a positive mask, in canonical order.
  std::vector<StructureId> positives() const;
  const std::map<StructureId, BinaryMask>& all() const { return masks_; }

 private:
  int height_ = 0;
  int width_ = 0;
  std::map<StructureId, BinaryMask> masks_;
};

bool is_positive(const BinaryMask& m);

/// Cell is set iff its patch window holds at least one foreground pixel.
GridMask to_grid(const BinaryMask& m, int patch);

/// Resamples to side×side with "any foreground in the source window"; windows
/// are widened to at least one pixel when upsampling.
BinaryMask resample_any(const BinaryMask& m, int side_rows, int side_cols);

/// Foreground pixels with at least one background 4-neighbor (outside counts as background).
BinaryMask contour(const BinaryMask& m);

/// Mean (row, col) of foreground pixels.
std::pair<double, double> centroid(const BinaryMask& m);

/// 8-connected components, largest first; ties broken by the first pixel in raster order.
std::vector<BinaryMask> connected_components(const BinaryMask& m);

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);

/// Binary PGM ("P5", maxval 255). Any nonzero pixel is foreground.
BinaryMask load_mask_pgm(const std::filesystem::path& path);
void save_mask_pgm(const std::filesystem::path& path, const BinaryMask& m);

}  // namespace segprompt::masks
