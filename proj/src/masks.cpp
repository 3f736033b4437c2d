#include "segprompt/masks.hpp"

#include "segprompt/image.hpp"

#include <algorithm>
#include <tuple>

namespace segprompt::masks {

using nn::require;

namespace {

struct StructureInfo {
  StructureId id;
  std::string_view key;
  std::string_view name;
  bool tubular;
};

constexpr std::array<StructureInfo, 9> kInfo = {{
    {StructureId::LeftLung, "LeftLung", "left lung", false},
    {StructureId::RightLung, "RightLung", "right lung", false},
    {StructureId::Heart, "Heart", "heart", false},
    {StructureId::CVC, "CVC", "central venous catheter", true},
    {StructureId::ETT, "ETT", "endotracheal tube", true},
    {StructureId::NGT, "NGT", "nasogastric tube", true},
    {StructureId::SGC, "SGC", "swan-ganz catheter", true},
    {StructureId::ChestTube, "ChestTube", "chest tube", true},
    {StructureId::Pneumothorax, "Pneumothorax", "pneumothorax", false},
}};

const StructureInfo& info(StructureId id) { return kInfo[static_cast<std::size_t>(id)]; }

}  // namespace

std::string_view structure_key(StructureId id) { return info(id).key; }
std::string_view structure_name(StructureId id) { return info(id).name; }
bool is_tubular(StructureId id) { return info(id).tubular; }

std::optional<StructureId> parse_structure(std::string_view key) {
  for (const auto& i : kInfo)
    if (i.key == key) return i.id;
  return std::nullopt;
}

BinaryMask::BinaryMask(int height, int width) : pixels_(PixelArray::Zero(height, width)) {
  require(height >= 0 && width >= 0, "BinaryMask: negative extents");
}

BinaryMask BinaryMask::from_pixels(const PixelArray& pixels) {
  BinaryMask m;
  m.pixels_ = (pixels != 0).cast<std::uint8_t>();
  return m;
}

void MaskSet::set(StructureId id, BinaryMask m) {
  require(m.height() == height_ && m.width() == width_,
          "MaskSet: mask for " + std::string(structure_key(id)) + " is " + std::to_string(m.height()) + "x" +
              std::to_string(m.width()) + ", view is " + std::to_string(height_) + "x" + std::to_string(width_));
  masks_[id] = std::move(m);
}

const BinaryMask* MaskSet::find(StructureId id) const {
  auto it = masks_.find(id);
  return it == masks_.end() ? nullptr : &it->second;
}

std::vector<StructureId> MaskSet::positives() const {
  std::vector<StructureId> out;
  for (const auto& [id, m] : masks_)  // std::map iterates in enum order
    if (is_positive(m)) out.push_back(id);
  return out;
}

bool is_positive(const BinaryMask& m) { return (m.pixels() != 0).any(); }

GridMask to_grid(const BinaryMask& m, int patch) {
  require(patch > 0, "to_grid: patch must be positive");
  require(m.height() % patch == 0 && m.width() % patch == 0,
          "to_grid: " + std::to_string(m.height()) + "x" + std::to_string(m.width()) + " not divisible by patch " +
              std::to_string(patch));
  const int rows = m.height() / patch;
  const int cols = m.width() / patch;
  GridMask g{BinaryMask(rows, cols)};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if ((m.pixels().block(r * patch, c * patch, patch, patch) != 0).any()) g.cells.set(r, c);
  return g;
}

BinaryMask resample_any(const BinaryMask& m, int side_rows, int side_cols) {
  require(side_rows > 0 && side_cols > 0, "resample_any: target extents must be positive");
  require(m.height() > 0 && m.width() > 0, "resample_any: empty source");
  const auto window = [](int i, int side, int extent) {
    const int begin = static_cast<int>(static_cast<long long>(i) * extent / side);
    const int end_ceil = static_cast<int>((static_cast<long long>(i + 1) * extent + side - 1) / side);
    return std::pair{begin, std::max(begin + 1, end_ceil)};
  };
  BinaryMask out(side_rows, side_cols);
  for (int r = 0; r < side_rows; ++r) {
    const auto [r0, r1] = window(r, side_rows, m.height());
    for (int c = 0; c < side_cols; ++c) {
      const auto [c0, c1] = window(c, side_cols, m.width());
      if ((m.pixels().block(r0, c0, r1 - r0, c1 - c0) != 0).any()) out.set(r, c);
    }
  }
  return out;
}

BinaryMask contour(const BinaryMask& m) {
  const int h = m.height();
  const int w = m.width();
  BinaryMask out(h, w);
  const auto bg = [&](int r, int c) { return r < 0 || c < 0 || r >= h || c >= w || !m.at(r, c); };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (m.at(r, c) && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) out.set(r, c);
  return out;
}

std::pair<double, double> centroid(const BinaryMask& m) {
  double sr = 0;
  double sc = 0;
  std::int64_t n = 0;
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(r, c)) {
        sr += r;
        sc += c;
        ++n;
      }
  require(n > 0, "centroid: mask has no foreground pixels");
  return {sr / static_cast<double>(n), sc / static_cast<double>(n)};
}

std::vector<BinaryMask> connected_components(const BinaryMask& m) {
  const int h = m.height();
  const int w = m.width();
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(h, w, -1);

  struct Component {
    BinaryMask mask;
    std::int64_t size;
    int first;  // raster index of its first pixel
  };
  std::vector<Component> comps;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!m.at(r, c) || label(r, c) >= 0) continue;
      const int id = static_cast<int>(comps.size());
      Component comp{BinaryMask(h, w), 0, r * w + c};
      stack.assign(1, {r, c});
      label(r, c) = id;
      while (!stack.empty()) {
        const auto [pr, pc] = stack.back();
        stack.pop_back();
        comp.mask.set(pr, pc);
        ++comp.size;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = pr + dr;
            const int nc = pc + dc;
            if (nr < 0 || nc < 0 || nr >= h || nc >= w) continue;
            if (m.at(nr, nc) && label(nr, nc) < 0) {
              label(nr, nc) = id;
              stack.emplace_back(nr, nc);
            }
          }
      }
      comps.push_back(std::move(comp));
    }
  }
  std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    return std::tie(b.size, a.first) < std::tie(a.size, b.first);
  });
  std::vector<BinaryMask> out;
  out.reserve(comps.size());
  for (auto& comp : comps) out.push_back(std::move(comp.mask));
  return out;
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  require(a.same_extents(b), "mask_union: extent mismatch");
  return BinaryMask::from_pixels((a.pixels() != 0 || b.pixels() != 0).cast<std::uint8_t>());
}

BinaryMask load_mask_pgm(const std::filesystem::path& path) { return BinaryMask::from_pixels(load_pgm(path)); }

void save_mask_pgm(const std::filesystem::path& path, const BinaryMask& m) {
  save_pgm(path, (m.pixels() * std::uint8_t{255}).eval());
}

}  // namespace segprompt::masks
