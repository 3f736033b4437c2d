#pragma once

// Hand-built studies shared by several test binaries.

#include "segprompt/prompting.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace segprompt::testkit {

inline masks::BinaryMask rect(int side, int r0, int c0, int r1, int c1) {
  masks::BinaryMask m(side, side);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.set(r, c);
  return m;
}

inline prompting::ViewInput blank_view(int side = 64) {
  return {GrayImage::Constant(side, side, 70), masks::MaskSet(side, side)};
}

// Current frontal with LL, RL, ETT, Heart positive (inserted out of order, plus
// an empty CVC) and a prior frontal with LL, RL, Heart.
inline prompting::StudyInput golden_study() {
  using masks::StructureId;
  prompting::StudyInput s;
  s.id = "golden";
  s.frontal = blank_view();
  s.frontal.masks.set(StructureId::ETT, rect(64, 2, 31, 30, 32));
  s.frontal.masks.set(StructureId::Heart, rect(64, 34, 24, 50, 44));
  s.frontal.masks.set(StructureId::CVC, masks::BinaryMask(64, 64));
  s.frontal.masks.set(StructureId::RightLung, rect(64, 10, 6, 54, 28));
  s.frontal.masks.set(StructureId::LeftLung, rect(64, 10, 36, 54, 58));
  prompting::ViewInput prior = blank_view();
  prior.masks.set(StructureId::Heart, rect(64, 34, 24, 50, 44));
  prior.masks.set(StructureId::LeftLung, rect(64, 10, 36, 54, 58));
  prior.masks.set(StructureId::RightLung, rect(64, 10, 6, 54, 28));
  s.prior = prior;
  s.context.prior_report = "heart size is normal .";
  s.context.indication = "cough .";
  s.target = "an endotracheal tube is in place . heart size is normal . the lungs are clear .";
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path golden_path(const std::string& name) {
  return std::filesystem::path(SEGPROMPT_GOLDEN_DIR) / name;
}

}  // namespace segprompt::testkit
