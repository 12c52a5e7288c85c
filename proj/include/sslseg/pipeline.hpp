#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sslseg/augment.hpp"
#include "sslseg/datahub.hpp"
#include "sslseg/model.hpp"
#include "sslseg/pseudolabel.hpp"

namespace sslseg {

// A decoded dataset row held in memory for the duration of a run. Images
// stay in raw [0, 1] space; normalization happens inside augmentation and
// evaluation.
struct LoadedSample {
  ImageF image;
  LabelMap label;  // meaningful only when has_label
  bool has_label = false;
};

// Decodes every row, validating labels against the class count.
std::vector<LoadedSample> load_samples(const std::vector<Sample>& rows,
                                       int classes);

// --- metrics --------------------------------------------------------------

// Rows index the reference class, columns the predicted class; reference
// pixels holding the ignore value are skipped.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<long> counts;  // classes * classes, row-major

  explicit ConfusionMatrix(int classes);
  void add(const LabelMap& reference, const LabelMap& prediction);

  long at(int ref, int pred) const {
    return counts[static_cast<std::size_t>(ref) * classes + pred];
  }
  long& at(int ref, int pred) {
    return counts[static_cast<std::size_t>(ref) * classes + pred];
  }

  // tp / (tp + fp + fn) per class; NaN where the union is empty.
  std::vector<double> per_class_iou() const;
  // Mean over classes with nonempty union; 0 when every class is empty.
  double miou() const;
};

struct EvalResult {
  double miou = 0.0;
  std::vector<double> per_class;  // NaN for classes with empty union
  ConfusionMatrix confusion{1};
};

// Single-scale, unflipped inference-mode evaluation at native resolution.
// Every sample must carry a ground-truth label. Model state is untouched.
EvalResult evaluate(MicroSegNet& net, const std::vector<LoadedSample>& val,
                    const std::array<double, 3>& means);

// --- training -------------------------------------------------------------

struct TrainConfig {
  long iters = 600;
  int batch_labeled = 8;  // clean-branch samples per step
  int batch_pseudo = 0;   // augmented-branch samples per step (0 disables)
  int crop = 64;          // square crop side, divisible by 4
  double base_lr = 0.01;
  double lr_power = 0.9;
  SgdOptions sgd{};
  int n_ops = 2;                // photometric ops per augmented sample
  double lambda_pseudo = 1.0;   // weight of the augmented-branch loss
  double scl_clamp = -4.0;
  bool pseudo_ce = false;       // plain cross entropy on the augmented branch
  bool strong_photometric = true;  // false: augmented branch uses basic
                                   // transforms only (still routed strong)
  BnMode bn_mode = BnMode::Dsbn;
  AugmentRanges ranges{};
  std::uint64_t seed = 1;
  std::uint64_t phase = 0;  // separates random streams between phases
  long log_every = 50;
};

struct TrainLogRow {
  long step = 0;
  double lr = 0.0;
  double ce = 0.0;     // clean-branch loss
  double scl = 0.0;    // augmented-branch loss (0 when the branch is off)
  double total = 0.0;  // ce + lambda_pseudo * scl, the optimized value
};

struct TrainStats {
  std::vector<TrainLogRow> log;  // every log_every steps plus the last
  double final_loss = 0.0;
};

// One optimization phase over `iters` steps. Each step draws a weakly
// augmented batch from `labeled` (weak branch, cross entropy) and, when the
// augmented branch is active, a strongly augmented batch from `pseudo`
// (strong branch, self-correcting loss by default), then takes one shared
// momentum-SGD step under the poly schedule. The augmented branch is active
// only when batch_pseudo > 0, pseudo is nonempty and lambda_pseudo > 0;
// otherwise the step is plain supervised training, bit for bit.
// Per-sample randomness derives from (seed, phase, step, slot) so runs are
// reproducible and the branches draw from independent streams.
TrainStats train_phase(MicroSegNet& net, SgdState& opt,
                       const std::vector<LoadedSample>& labeled,
                       const std::vector<LoadedSample>& pseudo,
                       const std::array<double, 3>& means,
                       const TrainConfig& config);

// Hard test-time-augmented predictions for every sample, as training rows.
std::vector<LoadedSample> pseudo_label_samples(
    MicroSegNet& net, const std::vector<LoadedSample>& unlabeled,
    const std::array<double, 3>& means, const TtaOptions& tta);

// --- iterative self-training ----------------------------------------------

struct IterateConfig {
  TrainConfig teacher;  // phase is assigned internally (0)
  TrainConfig student;  // phase r for round r
  TtaOptions tta{};
  int rounds = 2;    // student rounds after the initial teacher
  int patience = 2;  // consecutive non-improving rounds before stopping
  std::uint64_t model_seed = 1;
};

struct RoundRecord {
  std::string name;  // "teacher", "round-1", ...
  double val_miou = 0.0;
  std::vector<double> per_class;
  double final_loss = 0.0;
};

struct IterateResult {
  std::vector<RoundRecord> rounds;  // teacher first, then student rounds
  int best_index = 0;               // into rounds
  MicroSegNet best;                 // deep copy of the promoted model
};

// Trains the teacher on the labeled set, then for each round lets the best
// model so far pseudo-label the unlabeled images and trains a fresh student
// from the teacher's weights (strong bank re-initialized from weak) on
// labeled + pseudo data. Promotion follows validation mIoU; two consecutive
// non-improving rounds end the loop early.
IterateResult iterate(const std::vector<LoadedSample>& labeled,
                      const std::vector<LoadedSample>& unlabeled,
                      const std::vector<LoadedSample>& val,
                      const std::array<double, 3>& means,
                      const ModelConfig& model_config,
                      const IterateConfig& config);

// --- ablation grids -------------------------------------------------------

struct AblationRow {
  std::string grid;     // "bn" or "data"
  std::string setting;  // bn: variant; data: data group
  std::string variant;  // bn: augmented-branch strength; data: recipe
  double val_miou = 0.0;
};

// Two comparison grids sharing one teacher and one pseudo-label pass.
// "bn": student training under {dsbn, trainable, frozen} normalization with
// the augmented branch {weak, strong}, cross entropy on both branches.
// "data": from-scratch training on {labeled-gt, full-gt, pseudo} data under
// {plain, saug, saug-dsbn} recipes, where the saug recipes feed the same
// data through both branches.
std::vector<AblationRow> run_ablation(
    const std::vector<LoadedSample>& labeled,
    const std::vector<LoadedSample>& unlabeled,
    const std::vector<LoadedSample>& train_full_gt,
    const std::vector<LoadedSample>& val,
    const std::array<double, 3>& means, const ModelConfig& model_config,
    const IterateConfig& config);

// One CSV row per ablation entry: grid,setting,variant,val_miou.
void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows);

}  // namespace sslseg
