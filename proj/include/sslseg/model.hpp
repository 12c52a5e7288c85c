#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sslseg/dsbn.hpp"
#include "sslseg/tensor.hpp"

namespace sslseg {

struct ModelConfig {
  int in_channels = 3;
  int classes = 4;
  int features = 16;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
};

// Small fully-convolutional segmenter. Three 3x3 stages shrink the input to
// quarter resolution (features F, 2F, 4F), a dilated 3x3 stage widens the
// receptive field at 4F, bilinear upsampling restores the input size and a
// 1x1 head produces per-class logits. Every conv except the head is
// followed by branch-routed normalization and relu.
struct MicroSegNet {
  ModelConfig config;
  TensorPtr stem_k, down1_k, down2_k, middle_k;  // [K,C,3,3] kernels
  TensorPtr head_k;                              // [classes,4F,1,1]
  TensorPtr head_b;                              // [classes]
  DsbnState stem_bn, down1_bn, down2_bn, middle_bn;

  // Kernels draw from normal(0, sqrt(2 / fan_in)); the head bias starts at
  // zero and the normalization affine at identity. Deterministic in seed.
  static MicroSegNet create(const ModelConfig& config, std::uint64_t seed);

  // Trainable tensors in fixed order; optimizer state is keyed by position.
  std::vector<TensorPtr> parameters();

  std::vector<std::pair<std::string, DsbnState*>> bn_layers();
  std::vector<std::pair<std::string, const DsbnState*>> bn_layers() const;
};

// Deep copy: fresh tensors and statistic banks sharing nothing with the
// source. The copy is how a student forks off its teacher.
MicroSegNet clone_model(const MicroSegNet& net);

// Training forward on [N,in_channels,H,W] with H and W divisible by 4:
// batch-statistic normalization, running-bank updates routed by tag and
// mode, gradients recorded on the tape. Returns [N,classes,H,W] logits.
TensorPtr forward_train(Tape& tape, MicroSegNet& net, const TensorPtr& input,
                        BranchTag tag, BnMode mode = BnMode::Dsbn);

// Inference forward: weak running statistics, nothing recorded or updated.
TensorPtr forward_eval(MicroSegNet& net, const TensorPtr& input);

// --- optimization ---------------------------------------------------------

// base * (1 - iter / iter_max)^power, the schedule used for every run.
double poly_lr(double base, long iter, long iter_max, double power = 0.9);

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Momentum SGD; weight decay enters the velocity:
//   v <- momentum * v + g + weight_decay * theta
//   theta <- theta - lr * v
struct SgdState {
  SgdOptions options;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter
};

// Steps every parameter in order, creating zero velocity buffers on first
// use. A parameter with no accumulated gradient contributes g = 0 but still
// decays and moves with its velocity.
void sgd_step(SgdState& opt, const std::vector<TensorPtr>& params, double lr);

// --- checkpoints ----------------------------------------------------------

// Single-file checkpoint: the magic "SSLSEG1", a text manifest of named
// arrays (name, rank, dims, offset in doubles), a DATA marker, then the
// concatenated raw native little-endian float64 payload. Saves parameters,
// both statistic banks with their update counters, the iteration number and
// (when given) the optimizer velocities. Round trips are bitwise exact.
void save_checkpoint(const std::string& path, const MicroSegNet& net,
                     const SgdState* opt = nullptr, long iter = 0);

struct CheckpointInfo {
  long iter = 0;
  bool had_optimizer = false;
};

// Restores into an existing net of identical architecture (dimension_error
// otherwise). When opt is non-null, its velocities are replaced by the
// saved ones, or cleared if the file carries none.
CheckpointInfo load_checkpoint(const std::string& path, MicroSegNet& net,
                               SgdState* opt = nullptr);

}  // namespace sslseg
