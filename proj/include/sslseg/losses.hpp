#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sslseg/tensor.hpp"

namespace sslseg {

// Label value that excludes a pixel from every loss and metric.
inline constexpr int kIgnoreIndex = 255;

struct LossOutput {
  TensorPtr loss;               // scalar [1], mean over contributing pixels
  long pixel_count = 0;         // contributing pixels
  std::vector<double> weights;  // per-pixel max softmax probability [N*H*W]
};

// Mean cross entropy over pixels whose label is not ignore_index. labels is
// a row-major [N,H,W] plane matching the logits. Labels outside [0, C) that
// are not the ignore index raise domain_error. A batch with no contributing
// pixel yields loss 0 with pixel_count 0.
LossOutput cross_entropy(Tape& tape, const TensorPtr& logits,
                         std::span<const std::uint8_t> labels,
                         int ignore_index = kIgnoreIndex);

struct SclOptions {
  // Substitute for log(0) in the reversed term; more negative means strong
  // disagreement with a confident prediction costs more.
  double clamp_log_zero = -4.0;
  // Diagnostic mode: force every pixel weight to 1, which makes the loss
  // equal plain cross entropy.
  bool unit_weight = false;
  // Verification hook: per-pixel weights [N*H*W] to use instead of the max
  // softmax probability. Mirrors how the weight acts as a constant during
  // backward, letting finite differences see the same function.
  const std::vector<double>* fixed_weights = nullptr;
};

// Self-correcting pseudo-label loss. Per contributing pixel with softmax p,
// target t and weight w = max_c p_c (treated as a constant in backward):
//   l = w * (-log p_t) + (1 - w) * (-clamp) * (1 - p_t)
// averaged over contributing pixels. The second term rewards agreeing with
// the prediction when the pseudo label looks unreliable.
LossOutput scl(Tape& tape, const TensorPtr& logits,
               std::span<const std::uint8_t> labels,
               int ignore_index = kIgnoreIndex, const SclOptions& opts = {});

}  // namespace sslseg
