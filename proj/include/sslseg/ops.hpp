#pragma once

#include "sslseg/tensor.hpp"

namespace sslseg {

// 2-d cross-correlation. input [N,C,H,W], kernel [K,C,kh,kw] with odd kh,kw;
// output [N,K,H',W'] where H' = (H + 2*padding - ((kh-1)*dilation + 1)) /
// stride + 1 (floor), likewise W'. Gradients flow to both operands.
TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                 int stride, int padding, int dilation = 1);

// y[n,c,h,w] = x[n,c,h,w] + bias[c]. The per-channel bias gradient sums over
// N, H and W.
TensorPtr add_channel_bias(Tape& tape, const TensorPtr& x,
                           const TensorPtr& bias);

TensorPtr relu(Tape& tape, const TensorPtr& x);

// Elementwise; shapes must match exactly (no broadcasting).
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// Natural log; raises domain_error on any input <= 0.
TensorPtr log(Tape& tape, const TensorPtr& x);
TensorPtr exp(Tape& tape, const TensorPtr& x);

// Sum of all elements, shape [1].
TensorPtr sum(Tape& tape, const TensorPtr& x);

// y = factor * x for a plain double factor.
TensorPtr scale(Tape& tape, const TensorPtr& x, double factor);

// Softmax over the channel axis of an [N,C,H,W] tensor, C >= 2. Shift by the
// per-pixel max keeps it stable for large logits.
TensorPtr softmax_channel(Tape& tape, const TensorPtr& x);

// Bilinear resize of the spatial axes of an [N,C,H,W] tensor with
// half-pixel-center sampling and edge clamping. Identity (and identity
// gradient) when the size does not change.
TensorPtr resize_bilinear(Tape& tape, const TensorPtr& x, int out_h,
                          int out_w);

}  // namespace sslseg
