#pragma once

#include "segprompt/masks.hpp"
#include "segprompt/nn/tensor.hpp"

#include <filesystem>
#include <stdexcept>

namespace segprompt {

/// 8-bit grayscale image, row-major.
using GrayImage = masks::PixelArray;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

GrayImage load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Pixel values scaled to [0,1].
template <typename Scalar>
nn::Matrix<Scalar> to_unit(const GrayImage& image) {
  return image.cast<Scalar>().matrix() / Scalar(255);
}

}  // namespace segprompt
