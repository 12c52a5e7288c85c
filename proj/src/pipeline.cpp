#include "sslseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sslseg/errors.hpp"
#include "sslseg/losses.hpp"
#include "sslseg/ops.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

std::vector<LoadedSample> load_samples(const std::vector<Sample>& rows,
                                       int classes) {
  std::vector<LoadedSample> out;
  out.reserve(rows.size());
  for (const Sample& row : rows) {
    LoadedSample s;
    s.image = read_image(row.image_path);
    if (!row.label_path.empty()) {
      s.label = read_label(row.label_path, classes);
      if (s.label.height != s.image.height || s.label.width != s.image.width)
        throw dimension_error(row.id + ": image and label sizes differ");
      s.has_label = true;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- metrics --------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(int classes_) : classes(classes_) {
  if (classes < 1) throw dimension_error("ConfusionMatrix: classes >= 1");
  counts.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(const LabelMap& reference,
                          const LabelMap& prediction) {
  if (reference.height != prediction.height ||
      reference.width != prediction.width)
    throw dimension_error("ConfusionMatrix: size mismatch");
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    const int ref = reference.data[i];
    if (ref == kIgnoreIndex) continue;
    const int pred = prediction.data[i];
    if (ref >= classes || pred >= classes)
      throw domain_error("ConfusionMatrix: class index out of range");
    ++at(ref, pred);
  }
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
  std::vector<double> iou(static_cast<std::size_t>(classes),
                          std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < classes; ++c) {
    const long tp = at(c, c);
    long fp = 0, fn = 0;
    for (int o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += at(o, c);
      fn += at(c, o);
    }
    const long uni = tp + fp + fn;
    if (uni > 0)
      iou[static_cast<std::size_t>(c)] =
          static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  const std::vector<double> iou = per_class_iou();
  double total = 0;
  int present = 0;
  for (double v : iou)
    if (!std::isnan(v)) {
      total += v;
      ++present;
    }
  return present > 0 ? total / present : 0.0;
}

EvalResult evaluate(MicroSegNet& net, const std::vector<LoadedSample>& val,
                    const std::array<double, 3>& means) {
  if (val.empty()) throw config_error("evaluate: empty validation set");
  ConfusionMatrix cm(net.config.classes);

  constexpr std::size_t kChunk = 8;
  std::size_t start = 0;
  while (start < val.size()) {
    std::vector<const LoadedSample*> group{&val[start]};
    std::size_t end = start + 1;
    while (end < val.size() && group.size() < kChunk &&
           val[end].image.height == val[start].image.height &&
           val[end].image.width == val[start].image.width) {
      group.push_back(&val[end]);
      ++end;
    }
    const int h = group.front()->image.height;
    const int w = group.front()->image.width;
    std::vector<ImageF> prepared;
    prepared.reserve(group.size());
    for (const LoadedSample* s : group) {
      if (!s->has_label)
        throw config_error("evaluate: sample lacks a ground-truth label");
      prepared.push_back(s->image);
      subtract_means(prepared.back(), means);
    }
    TensorPtr logits = forward_eval(net, image_batch_to_tensor(prepared));
    const long plane =
        static_cast<long>(net.config.classes) * h * w;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const double* base =
          logits->values.data() + static_cast<long>(i) * plane;
      LabelMap pred = argmax_to_label(
          std::vector<double>(base, base + plane), net.config.classes, h, w);
      cm.add(group[i]->label, pred);
    }
    start = end;
  }

  EvalResult result{cm.miou(), cm.per_class_iou(), cm};
  return result;
}

// --- training -------------------------------------------------------------

namespace {

void validate_train_config(const TrainConfig& c,
                           const std::vector<LoadedSample>& labeled) {
  if (labeled.empty()) throw config_error("train: empty labeled set");
  if (c.iters < 1) throw config_error("train: iters >= 1 required");
  if (c.batch_labeled < 1)
    throw config_error("train: batch_labeled >= 1 required");
  if (c.batch_pseudo < 0)
    throw config_error("train: batch_pseudo must not be negative");
  if (c.crop < 4 || c.crop % 4 != 0)
    throw config_error("train: crop must be a positive multiple of 4");
  if (c.lambda_pseudo < 0.0)
    throw config_error("train: lambda_pseudo must not be negative");
  if (c.log_every < 1) throw config_error("train: log_every >= 1 required");
  validate_ranges(c.ranges);
  for (const LoadedSample& s : labeled)
    if (!s.has_label) throw config_error("train: unlabeled row in labeled set");
}

// One batch drawn from `pool` with replacement. `purpose` encodes the step
// and the branch, so the two branches of a step and all steps of a phase
// draw from disjoint random streams; stream 0 picks indices, stream
// slot + 1 augments that slot.
void assemble_batch(const std::vector<LoadedSample>& pool, int batch,
                    bool strong, const TrainConfig& c, std::uint64_t purpose,
                    const std::array<double, 3>& means,
                    std::vector<ImageF>& images,
                    std::vector<LabelMap>& labels) {
  images.resize(static_cast<std::size_t>(batch));
  labels.resize(static_cast<std::size_t>(batch));
  Rng pick = derive_rng(c.seed, c.phase, purpose, 0);
  for (int slot = 0; slot < batch; ++slot) {
    const int idx = pick.uniform_int(static_cast<int>(pool.size()));
    Rng aug = derive_rng(c.seed, c.phase, purpose,
                         static_cast<std::uint64_t>(slot) + 1);
    const LoadedSample& s = pool[static_cast<std::size_t>(idx)];
    if (strong) {
      const std::vector<PhotometricOp> policy = sample_policy(c.n_ops, aug);
      apply_strong(s.image, s.label, policy, c.crop, c.crop, means, c.ranges,
                   aug, images[static_cast<std::size_t>(slot)],
                   labels[static_cast<std::size_t>(slot)]);
    } else {
      apply_weak(s.image, s.label, c.crop, c.crop, means, c.ranges, aug,
                 images[static_cast<std::size_t>(slot)],
                 labels[static_cast<std::size_t>(slot)]);
    }
  }
}

std::uint64_t make_purpose(long step, std::uint64_t branch) {
  return (static_cast<std::uint64_t>(step) << 8) | branch;
}

}  // namespace

TrainStats train_phase(MicroSegNet& net, SgdState& opt,
                       const std::vector<LoadedSample>& labeled,
                       const std::vector<LoadedSample>& pseudo,
                       const std::array<double, 3>& means,
                       const TrainConfig& config) {
  validate_train_config(config, labeled);
  const bool use_pseudo = config.batch_pseudo > 0 && !pseudo.empty() &&
                          config.lambda_pseudo > 0.0;
  if (use_pseudo)
    for (const LoadedSample& s : pseudo)
      if (!s.has_label)
        throw config_error("train: pseudo sample lacks a label");

  TrainStats stats;
  std::vector<TensorPtr> params = net.parameters();
  std::vector<ImageF> images;
  std::vector<LabelMap> labels;

  for (long step = 0; step < config.iters; ++step) {
    const double lr =
        poly_lr(config.base_lr, step, config.iters, config.lr_power);
    Tape tape;

    assemble_batch(labeled, config.batch_labeled, false, config,
                   make_purpose(step, 0x10), means, images, labels);
    TensorPtr x = image_batch_to_tensor(images);
    TensorPtr logits =
        forward_train(tape, net, x, BranchTag::Weak, config.bn_mode);
    LossOutput ce =
        cross_entropy(tape, logits, label_batch_to_plane(labels));

    TensorPtr total = ce.loss;
    double scl_value = 0.0;
    if (use_pseudo) {
      assemble_batch(pseudo, config.batch_pseudo, config.strong_photometric,
                     config, make_purpose(step, 0x20), means, images, labels);
      TensorPtr xp = image_batch_to_tensor(images);
      TensorPtr logits_p =
          forward_train(tape, net, xp, BranchTag::Strong, config.bn_mode);
      LossOutput pseudo_loss;
      if (config.pseudo_ce) {
        pseudo_loss =
            cross_entropy(tape, logits_p, label_batch_to_plane(labels));
      } else {
        SclOptions scl_opts;
        scl_opts.clamp_log_zero = config.scl_clamp;
        pseudo_loss = scl(tape, logits_p, label_batch_to_plane(labels),
                          kIgnoreIndex, scl_opts);
      }
      scl_value = pseudo_loss.loss->values[0];
      total = add(tape, ce.loss,
                  scale(tape, pseudo_loss.loss, config.lambda_pseudo));
    }

    tape.backward(total);
    sgd_step(opt, params, lr);
    for (const TensorPtr& p : params) p->zero_grad();

    if (step % config.log_every == 0 || step == config.iters - 1)
      stats.log.push_back({step, lr, ce.loss->values[0], scl_value,
                           total->values[0]});
    stats.final_loss = total->values[0];
  }
  return stats;
}

std::vector<LoadedSample> pseudo_label_samples(
    MicroSegNet& net, const std::vector<LoadedSample>& unlabeled,
    const std::array<double, 3>& means, const TtaOptions& tta) {
  std::vector<ImageF> images;
  images.reserve(unlabeled.size());
  for (const LoadedSample& s : unlabeled) images.push_back(s.image);
  const std::vector<std::vector<double>> probs =
      tta_probabilities_batch(net, images, means, tta);
  std::vector<LoadedSample> out;
  out.reserve(unlabeled.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    LoadedSample s;
    s.image = unlabeled[i].image;
    s.label = argmax_to_label(probs[i], net.config.classes,
                              s.image.height, s.image.width);
    s.has_label = true;
    out.push_back(std::move(s));
  }
  return out;
}

// --- iterative self-training ----------------------------------------------

IterateResult iterate(const std::vector<LoadedSample>& labeled,
                      const std::vector<LoadedSample>& unlabeled,
                      const std::vector<LoadedSample>& val,
                      const std::array<double, 3>& means,
                      const ModelConfig& model_config,
                      const IterateConfig& config) {
  if (config.rounds < 0) throw config_error("iterate: rounds must be >= 0");
  if (config.patience < 1) throw config_error("iterate: patience >= 1");
  if (config.rounds > 0 && unlabeled.empty())
    throw config_error("iterate: student rounds need unlabeled data");

  IterateResult result;
  MicroSegNet teacher = MicroSegNet::create(model_config, config.model_seed);
  {
    SgdState opt;
    TrainConfig cfg = config.teacher;
    cfg.phase = 0;
    cfg.batch_pseudo = 0;
    TrainStats stats = train_phase(teacher, opt, labeled, {}, means, cfg);
    EvalResult ev = evaluate(teacher, val, means);
    result.rounds.push_back(
        {"teacher", ev.miou, ev.per_class, stats.final_loss});
  }
  result.best = clone_model(teacher);
  result.best_index = 0;
  double best_miou = result.rounds[0].val_miou;
  int drops = 0;

  for (int round = 1; round <= config.rounds; ++round) {
    const std::vector<LoadedSample> pseudo =
        pseudo_label_samples(result.best, unlabeled, means, config.tta);

    MicroSegNet student = clone_model(result.best);
    for (auto& [name, bn] : student.bn_layers()) init_pbn(*bn);
    SgdState opt;
    TrainConfig cfg = config.student;
    cfg.phase = static_cast<std::uint64_t>(round);
    TrainStats stats =
        train_phase(student, opt, labeled, pseudo, means, cfg);
    EvalResult ev = evaluate(student, val, means);
    result.rounds.push_back({"round-" + std::to_string(round), ev.miou,
                             ev.per_class, stats.final_loss});

    if (ev.miou > best_miou) {
      best_miou = ev.miou;
      result.best = clone_model(student);
      result.best_index = round;
      drops = 0;
    } else if (++drops >= config.patience) {
      break;
    }
  }
  return result;
}

// --- ablation grids -------------------------------------------------------

std::vector<AblationRow> run_ablation(
    const std::vector<LoadedSample>& labeled,
    const std::vector<LoadedSample>& unlabeled,
    const std::vector<LoadedSample>& train_full_gt,
    const std::vector<LoadedSample>& val,
    const std::array<double, 3>& means, const ModelConfig& model_config,
    const IterateConfig& config) {
  std::vector<AblationRow> rows;

  MicroSegNet teacher = MicroSegNet::create(model_config, config.model_seed);
  {
    SgdState opt;
    TrainConfig cfg = config.teacher;
    cfg.phase = 0;
    cfg.batch_pseudo = 0;
    train_phase(teacher, opt, labeled, {}, means, cfg);
  }
  const std::vector<LoadedSample> pseudo =
      pseudo_label_samples(teacher, unlabeled, means, config.tta);

  // Normalization grid: teacher-initialized students, cross entropy on both
  // branches, varying the normalization policy and the augmented-branch
  // strength.
  std::uint64_t phase = 10;
  const std::pair<const char*, BnMode> bn_variants[] = {
      {"dsbn", BnMode::Dsbn},
      {"trainable", BnMode::Shared},
      {"frozen", BnMode::Frozen}};
  for (const auto& [bn_name, bn_mode] : bn_variants)
    for (bool strong : {false, true}) {
      MicroSegNet student = clone_model(teacher);
      for (auto& [name, bn] : student.bn_layers()) init_pbn(*bn);
      SgdState opt;
      TrainConfig cfg = config.student;
      cfg.phase = phase++;
      cfg.bn_mode = bn_mode;
      cfg.pseudo_ce = true;
      cfg.strong_photometric = strong;
      train_phase(student, opt, labeled, pseudo, means, cfg);
      rows.push_back({"bn", bn_name, strong ? "strong" : "weak",
                      evaluate(student, val, means).miou});
    }

  // Data grid: from-scratch runs per data group. The saug recipes feed the
  // group through the weak branch and the strongly augmented branch at
  // once; plain uses the weak branch alone.
  const std::pair<const char*, const std::vector<LoadedSample>*> groups[] = {
      {"labeled-gt", &labeled},
      {"full-gt", &train_full_gt},
      {"pseudo", &pseudo}};
  phase = 20;
  for (const auto& [group_name, group] : groups)
    for (const char* variant : {"plain", "saug", "saug-dsbn"}) {
      MicroSegNet net = MicroSegNet::create(model_config, config.model_seed);
      SgdState opt;
      TrainConfig cfg = config.student;
      cfg.phase = phase++;
      cfg.pseudo_ce = true;
      if (std::string(variant) == "plain") {
        cfg.batch_pseudo = 0;
      } else {
        cfg.strong_photometric = true;
        cfg.bn_mode = std::string(variant) == "saug-dsbn" ? BnMode::Dsbn
                                                          : BnMode::Shared;
      }
      train_phase(net, opt, *group, *group, means, cfg);
      rows.push_back(
          {"data", group_name, variant, evaluate(net, val, means).miou});
    }
  return rows;
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw io_error("cannot open " + path + " for writing");
  std::fprintf(f, "grid,setting,variant,val_miou\n");
  for (const AblationRow& r : rows)
    std::fprintf(f, "%s,%s,%s,%.17g\n", r.grid.c_str(), r.setting.c_str(),
                 r.variant.c_str(), r.val_miou);
  std::fclose(f);
}

}  // namespace sslseg
