#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "sslseg/tensor.hpp"

namespace sslseg {

// Interleaved RGB image with double samples. File I/O quantizes to 8 bits;
// in memory, untouched pixels are exact multiples of 1/255 in [0, 1], while
// augmented or normalized pixels may leave that range.
struct ImageF {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // height * width * 3, row-major, RGB

  ImageF() = default;
  ImageF(int h, int w, double fill = 0.0)
      : height(h), width(w),
        data(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 +
                static_cast<std::size_t>(c)];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 +
                static_cast<std::size_t>(c)];
  }
  long pixels() const { return static_cast<long>(height) * width; }
};

// Per-pixel class indices; 255 is the global ignore value.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
};

// Stacks images of one size into an [N,3,H,W] tensor (planar per channel).
TensorPtr image_batch_to_tensor(std::span<const ImageF> images);

// Flattens labels of one size into an [N*H*W] plane for the losses.
std::vector<std::uint8_t> label_batch_to_plane(std::span<const LabelMap> labels);

// [C,H,W] probabilities (or any planar tensor slice) back to per-pixel
// argmax with ties resolved toward the lowest class index.
LabelMap argmax_to_label(const std::vector<double>& chw, int classes, int h,
                         int w);

}  // namespace sslseg
