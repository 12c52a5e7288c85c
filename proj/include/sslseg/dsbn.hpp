#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sslseg/tensor.hpp"

namespace sslseg {

// Which data distribution a training batch belongs to. Weak is the clean /
// lightly augmented branch whose statistics serve evaluation; Strong is the
// heavily augmented pseudo-label branch.
enum class BranchTag { Weak, Strong };

// Normalization policy for ablations. Dsbn routes running statistics by
// branch tag; Shared funnels every batch into the weak bank (one trainable
// bank); Frozen normalizes with the stored weak statistics and never
// updates them (affine parameters still learn).
enum class BnMode { Dsbn, Shared, Frozen };

// Batch normalization state with one affine pair shared across two running
// statistic banks. Running updates use
//   new = momentum * old + (1 - momentum) * batch_value
// with the biased (1/m) batch variance, and epsilon sits inside the square
// root of every normalization.
struct DsbnState {
  TensorPtr gamma;  // [C]
  TensorPtr beta;   // [C]
  std::vector<double> weak_mean, weak_var;
  std::vector<double> strong_mean, strong_var;
  long weak_updates = 0;
  long strong_updates = 0;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static DsbnState create(int channels, double momentum = 0.9,
                          double epsilon = 1e-5);
  int channels() const { return gamma->dim(0); }
};

// Training-mode forward on an [N,C,H,W] batch: normalizes with batch
// statistics (except Frozen mode, which uses the stored weak bank), updates
// the routed bank, and records backward closures for x, gamma and beta.
// Requires more than one element per channel.
TensorPtr bn_forward_train(Tape& tape, const TensorPtr& x, DsbnState& bn,
                           BranchTag tag, BnMode mode = BnMode::Dsbn);

// Inference-mode forward: normalizes with the weak bank, touches nothing,
// records nothing.
TensorPtr bn_forward_eval(const TensorPtr& x, const DsbnState& bn);

// Copies the weak bank into the strong bank and marks the strong bank as
// freshly initialized (strong_updates = 0).
void init_pbn(DsbnState& bn);

struct StatsRow {
  std::string layer;
  int channel;
  double weak_mean, weak_var, strong_mean, strong_var;
};

// Divergence between the two banks: mean over channels of
// |weak_mean - strong_mean| + |log weak_var - log strong_var|. A layer whose
// strong bank was never updated counts as zero divergence (the strong bank
// is by definition still a copy of its initialization).
struct StatsReport {
  std::vector<StatsRow> rows;
  std::vector<std::pair<std::string, double>> per_layer;
  double mean_abs_mean_diff = 0.0;
  double mean_abs_logvar_diff = 0.0;
  bool strong_at_init = false;  // no strong update anywhere in the model

  double divergence() const {
    return mean_abs_mean_diff + mean_abs_logvar_diff;
  }
};

StatsReport stats_report(
    const std::vector<std::pair<std::string, const DsbnState*>>& layers);

// CSV with header layer,channel,weak_mean,weak_var,strong_mean,strong_var.
void write_stats_csv(const std::string& path, const StatsReport& report);

}  // namespace sslseg
