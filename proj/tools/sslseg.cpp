// Command-line front end: dataset generation, teacher/student training,
// pseudo-labeling, iterative self-training, evaluation, and reports.
#include <CLI11.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sslseg/config.hpp"
#include "sslseg/dsbn.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/pipeline.hpp"
#include "sslseg/pseudolabel.hpp"

namespace fs = std::filesystem;
using namespace sslseg;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Exclusive ownership of a run directory for the duration of one command.
// A leftover `lock` file from a crashed run must be removed by hand.
class RunDir {
 public:
  explicit RunDir(const fs::path& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec)
      throw io_error("cannot create run directory '" + dir_.string() + "'");
    lock_path_ = dir_ / "lock";
    fd_ = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw config_error("run directory '" + dir_.string() +
                         "' is locked; remove its 'lock' file if no other "
                         "process is using it");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t n = ::write(fd_, pid.data(), pid.size());
  }
  ~RunDir() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(lock_path_, ec);
    }
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const fs::path& path() const { return dir_; }

  void write_resolved(const RunConfig& config) const {
    write_text(dir_ / "config.ini", dump_config(config));
  }

  static void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out.good())
      throw io_error("cannot write '" + path.string() + "'");
  }

 private:
  fs::path dir_;
  fs::path lock_path_;
  int fd_ = -1;
};

// Flags shared by every subcommand; `--run` picks the output directory name.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string out;
  std::string run;
};

void add_common(CLI::App* sub, CommonOpts& o, const char* default_run) {
  sub->add_option("-c,--config", o.config_path, "Config file (key = value)");
  sub->add_option("--set", o.sets,
                  "Override one config key, e.g. --set train.crop=32");
  sub->add_option("--seed", o.seed, "Seed override (highest precedence)");
  sub->add_option("--out", o.out, "Output root directory override");
  if (default_run != nullptr) {
    o.run = default_run;
    sub->add_option("--run", o.run, "Run name under the output root")
        ->capture_default_str();
  }
  std::string keys = "Config keys:";
  for (const std::string& k : config_key_names()) keys += "\n  " + k;
  sub->footer(keys + "\nPrecedence: config file < SSLSEG_SEED < --set < "
                     "--seed/--out.");
}

RunConfig load_config(const CommonOpts& o) {
  RunConfig config;
  if (!o.config_path.empty()) config = parse_config_file(o.config_path);
  if (const char* env = std::getenv("SSLSEG_SEED")) {
    if (*env != '\0') apply_override(config, std::string("seed=") + env);
  }
  for (const std::string& s : o.sets) apply_override(config, s);
  if (!o.seed.empty()) apply_override(config, "seed=" + o.seed);
  if (!o.out.empty()) config.out = o.out;
  return config;
}

fs::path run_dir(const RunConfig& config, const CommonOpts& o) {
  return fs::path(config.out) / o.run;
}

// The dataset as the other subcommands see it.
struct Dataset {
  std::vector<Sample> train, val;
  std::array<double, 3> means{};
};

Dataset load_dataset(const RunConfig& config) {
  const std::string dir = resolved_data_dir(config);
  if (!fs::exists(fs::path(dir) / "manifest.tsv"))
    throw config_error("no dataset at '" + dir + "'; run gen-data first");
  Dataset d;
  for (Sample& s : read_manifest(dir + "/manifest.tsv")) {
    if (s.split == Split::Val)
      d.val.push_back(std::move(s));
    else
      d.train.push_back(std::move(s));
  }
  d.means = read_means(dir + "/means.txt");
  return d;
}

// Deterministic labeled/unlabeled partition of the training rows.
std::pair<std::vector<Sample>, std::vector<Sample>> partition(
    const Dataset& d, const RunConfig& config) {
  return split_labeled(d.train, config.labeled_fraction, config.seed);
}

void write_curve_csv(const fs::path& path, const TrainStats& stats) {
  std::string text = "step,lr,ce,scl,total\n";
  for (const TrainLogRow& r : stats.log)
    text += std::to_string(r.step) + "," + fmt(r.lr) + "," + fmt(r.ce) + "," +
            fmt(r.scl) + "," + fmt(r.total) + "\n";
  RunDir::write_text(path, text);
}

std::string iou_header(int classes) {
  std::string h;
  for (int c = 0; c < classes; ++c) h += ",iou_" + std::to_string(c);
  return h;
}

std::string iou_row(const std::vector<double>& per_class) {
  std::string r;
  for (double v : per_class) r += "," + fmt(v);
  return r;
}

void write_metrics_csv(const fs::path& path, const EvalResult& ev) {
  const int classes = static_cast<int>(ev.per_class.size());
  RunDir::write_text(path, "miou" + iou_header(classes) + "\n" +
                               fmt(ev.miou) + iou_row(ev.per_class) + "\n");
}

MicroSegNet load_model(const RunConfig& config, const std::string& path) {
  MicroSegNet net = MicroSegNet::create(to_model_config(config), config.seed);
  load_checkpoint(path, net);
  return net;
}

std::string default_ckpt(const RunConfig& config, const char* run) {
  return (fs::path(config.out) / run / "checkpoint.ckpt").string();
}

int cmd_gen_data(const CommonOpts& o) {
  RunConfig config = load_config(o);
  const SyntheticSpec spec = to_synthetic_spec(config);
  RunDir run(resolved_data_dir(config));
  run.write_resolved(config);
  generate_dataset(spec, config.train_images, config.val_images,
                   run.path().string());
  std::printf("gen-data: %d train + %d val images of size %d in %s\n",
              config.train_images, config.val_images, spec.image_size,
              run.path().c_str());
  return 0;
}

int cmd_train_teacher(const CommonOpts& o) {
  RunConfig config = load_config(o);
  Dataset data = load_dataset(config);
  auto [labeled_rows, unlabeled_rows] = partition(data, config);
  std::vector<LoadedSample> labeled = load_samples(labeled_rows, config.classes);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  MicroSegNet net = MicroSegNet::create(to_model_config(config), config.seed);
  SgdState opt;
  const TrainConfig tc = to_teacher_config(config);
  TrainStats stats = train_phase(net, opt, labeled, {}, data.means, tc);
  write_curve_csv(run.path() / "curve.csv", stats);
  save_checkpoint((run.path() / "checkpoint.ckpt").string(), net, &opt,
                  tc.iters);
  std::printf("train-teacher: %d labeled images, %ld iters, final loss %s\n",
              static_cast<int>(labeled.size()), tc.iters,
              fmt(stats.final_loss).c_str());
  return 0;
}

int cmd_pseudo_label(const CommonOpts& o, const std::string& model_path) {
  RunConfig config = load_config(o);
  Dataset data = load_dataset(config);
  auto [labeled_rows, unlabeled_rows] = partition(data, config);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  MicroSegNet net = load_model(
      config, model_path.empty() ? default_ckpt(config, "teacher") : model_path);
  SemiDatasetResult result =
      generate_semi_dataset(net, unlabeled_rows, data.means,
                            run.path().string(), to_tta_options(config));
  int labeled_count = 0;
  for (const Sample& s : result.samples)
    if (s.provenance == Provenance::Pseudo) ++labeled_count;
  std::printf("pseudo-label: %d of %d images labeled\n", labeled_count,
              static_cast<int>(result.samples.size()));
  for (const auto& [id, reason] : result.failures)
    std::fprintf(stderr, "pseudo-label: skipped %s: %s\n", id.c_str(),
                 reason.c_str());
  return 0;
}

int cmd_train_student(const CommonOpts& o, const std::string& pseudo_manifest,
                      const std::string& init_path) {
  RunConfig config = load_config(o);
  Dataset data = load_dataset(config);
  auto [labeled_rows, unlabeled_rows] = partition(data, config);

  const std::string manifest =
      pseudo_manifest.empty()
          ? (fs::path(config.out) / "pseudo" / "manifest.tsv").string()
          : pseudo_manifest;
  if (!fs::exists(manifest))
    throw config_error("pseudo manifest '" + manifest +
                       "' not found; run pseudo-label first");
  std::vector<Sample> pseudo_rows;
  for (Sample& s : read_manifest(manifest))
    if (s.provenance == Provenance::Pseudo) pseudo_rows.push_back(std::move(s));
  if (pseudo_rows.empty())
    throw config_error("pseudo manifest '" + manifest +
                       "' holds no pseudo-labeled rows");

  std::vector<LoadedSample> labeled = load_samples(labeled_rows, config.classes);
  std::vector<LoadedSample> pseudo = load_samples(pseudo_rows, config.classes);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  MicroSegNet net = load_model(
      config, init_path.empty() ? default_ckpt(config, "teacher") : init_path);
  for (auto& [name, bn] : net.bn_layers()) init_pbn(*bn);
  SgdState opt;
  const TrainConfig tc = to_student_config(config);
  TrainStats stats = train_phase(net, opt, labeled, pseudo, data.means, tc);
  write_curve_csv(run.path() / "curve.csv", stats);
  save_checkpoint((run.path() / "checkpoint.ckpt").string(), net, &opt,
                  tc.iters);
  std::printf(
      "train-student: %d labeled + %d pseudo images, %ld iters, final loss %s\n",
      static_cast<int>(labeled.size()), static_cast<int>(pseudo.size()),
      tc.iters, fmt(stats.final_loss).c_str());
  return 0;
}

int cmd_iterate(const CommonOpts& o) {
  RunConfig config = load_config(o);
  Dataset data = load_dataset(config);
  auto [labeled_rows, unlabeled_rows] = partition(data, config);
  std::vector<LoadedSample> labeled = load_samples(labeled_rows, config.classes);
  std::vector<LoadedSample> unlabeled =
      load_samples(unlabeled_rows, config.classes);
  std::vector<LoadedSample> val = load_samples(data.val, config.classes);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  IterateResult result = iterate(labeled, unlabeled, val, data.means,
                                 to_model_config(config),
                                 to_iterate_config(config));
  std::string text = "round,miou" + iou_header(config.classes) + "\n";
  for (const RoundRecord& r : result.rounds) {
    text += r.name + "," + fmt(r.val_miou) + iou_row(r.per_class) + "\n";
    std::printf("iterate: %s val miou %s\n", r.name.c_str(),
                fmt(r.val_miou).c_str());
  }
  RunDir::write_text(run.path() / "rounds.csv", text);
  save_checkpoint((run.path() / "best.ckpt").string(), result.best, nullptr,
                  0);
  std::printf("iterate: best %s\n",
              result.rounds[static_cast<std::size_t>(result.best_index)]
                  .name.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& model_path, bool fresh) {
  RunConfig config = load_config(o);
  Dataset data = load_dataset(config);
  std::vector<LoadedSample> val = load_samples(data.val, config.classes);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  MicroSegNet net = MicroSegNet::create(to_model_config(config), config.seed);
  if (!fresh)
    load_checkpoint(
        model_path.empty() ? default_ckpt(config, "teacher") : model_path, net);
  EvalResult ev = evaluate(net, val, data.means);
  write_metrics_csv(run.path() / "metrics.csv", ev);
  std::printf("eval: %d images, miou %s\n", static_cast<int>(val.size()),
              fmt(ev.miou).c_str());
  return 0;
}

int cmd_bn_stats(const CommonOpts& o, const std::string& model_path) {
  RunConfig config = load_config(o);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  MicroSegNet net = load_model(
      config, model_path.empty() ? default_ckpt(config, "teacher") : model_path);
  std::vector<std::pair<std::string, const DsbnState*>> layers;
  for (auto& [name, bn] : net.bn_layers()) layers.emplace_back(name, bn);
  StatsReport report = stats_report(layers);
  write_stats_csv((run.path() / "bn_stats.csv").string(), report);
  std::printf("bn-stats: divergence %s (mean %s, logvar %s), strong bank %s\n",
              fmt(report.divergence()).c_str(),
              fmt(report.mean_abs_mean_diff).c_str(),
              fmt(report.mean_abs_logvar_diff).c_str(),
              report.strong_at_init ? "untouched" : "updated");
  return 0;
}

int cmd_aug_preview(const CommonOpts& o, int count) {
  RunConfig config = load_config(o);
  if (count < 1) throw config_error("--count must be >= 1");
  Dataset data = load_dataset(config);
  validate_ranges(config.ranges);
  if (config.n_ops < 1)
    throw config_error("config key 'augment.n_ops': bad value '" +
                       std::to_string(config.n_ops) + "'");
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  // Zero means keep the previews in displayable range.
  const std::array<double, 3> no_means{0.0, 0.0, 0.0};
  std::string policy_csv = "id,ops\n";
  int written = 0;
  for (const Sample& s : data.train) {
    if (written >= count) break;
    if (s.label_path.empty()) continue;
    ImageF img = read_image(s.image_path);
    LabelMap lab = read_label(s.label_path, config.classes);
    const fs::path base = run.path() / s.id;

    write_image(base.string() + "_before.ppm", img);
    ImageF out_img;
    LabelMap out_lab;
    Rng weak_rng = derive_rng(config.seed, 0xA09, written, 0);
    apply_weak(img, lab, config.crop, config.crop, no_means, config.ranges,
               weak_rng, out_img, out_lab);
    write_image(base.string() + "_weak.ppm", out_img);
    write_label(base.string() + "_weak.pgm", out_lab);

    Rng strong_rng = derive_rng(config.seed, 0xA09, written, 1);
    std::vector<PhotometricOp> policy =
        sample_policy(config.n_ops, strong_rng);
    apply_strong(img, lab, policy, config.crop, config.crop, no_means,
                 config.ranges, strong_rng, out_img, out_lab);
    write_image(base.string() + "_strong.ppm", out_img);
    write_label(base.string() + "_strong.pgm", out_lab);

    policy_csv += s.id;
    for (std::size_t i = 0; i < policy.size(); ++i)
      policy_csv += std::string(i == 0 ? "," : "+") + op_name(policy[i]);
    policy_csv += "\n";
    ++written;
  }
  if (written == 0) throw config_error("no labeled training images to preview");
  RunDir::write_text(run.path() / "policies.csv", policy_csv);
  std::printf("aug-preview: %d image triples in %s\n", written,
              run.path().c_str());
  return 0;
}

int cmd_ablate(const CommonOpts& o) {
  RunConfig config = load_config(o);
  Dataset data = load_dataset(config);
  auto [labeled_rows, unlabeled_rows] = partition(data, config);
  std::vector<LoadedSample> labeled = load_samples(labeled_rows, config.classes);
  std::vector<LoadedSample> unlabeled =
      load_samples(unlabeled_rows, config.classes);
  std::vector<LoadedSample> full = load_samples(data.train, config.classes);
  std::vector<LoadedSample> val = load_samples(data.val, config.classes);
  RunDir run(run_dir(config, o));
  run.write_resolved(config);

  std::vector<AblationRow> rows =
      run_ablation(labeled, unlabeled, full, val, data.means,
                   to_model_config(config), to_iterate_config(config));
  write_ablation_csv((run.path() / "ablate.csv").string(), rows);
  for (const AblationRow& r : rows)
    std::printf("ablate: %s %s %s miou %s\n", r.grid.c_str(),
                r.setting.c_str(), r.variant.c_str(), fmt(r.val_miou).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised segmentation experiments on synthetic data"};
  app.require_subcommand(1);

  CommonOpts gen_o, teach_o, pseudo_o, student_o, iter_o, eval_o, stats_o,
      prev_o, abl_o;
  std::string pseudo_model, student_manifest, student_init, eval_model,
      stats_model;
  bool eval_fresh = false;
  int preview_count = 4;

  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate the synthetic dataset into data.dir");
  add_common(gen, gen_o, nullptr);

  CLI::App* teach = app.add_subcommand(
      "train-teacher", "Train the supervised model on the labeled split");
  add_common(teach, teach_o, "teacher");

  CLI::App* pseudo = app.add_subcommand(
      "pseudo-label", "Label the unlabeled split with a trained model");
  add_common(pseudo, pseudo_o, "pseudo");
  pseudo->add_option("--model", pseudo_model,
                     "Checkpoint to label with (default: <out>/teacher)");

  CLI::App* student = app.add_subcommand(
      "train-student",
      "Train on labeled + pseudo-labeled data with two-branch normalization");
  add_common(student, student_o, "student");
  student->add_option("--pseudo", student_manifest,
                      "Pseudo manifest (default: <out>/pseudo/manifest.tsv)");
  student->add_option("--init", student_init,
                      "Initial checkpoint (default: <out>/teacher)");

  CLI::App* iter = app.add_subcommand(
      "iterate", "Full self-training loop: teacher, then student rounds");
  add_common(iter, iter_o, "iterate");

  CLI::App* ev = app.add_subcommand("eval", "Validation mean IoU of a model");
  add_common(ev, eval_o, "eval");
  ev->add_option("--model", eval_model,
                 "Checkpoint to evaluate (default: <out>/teacher)");
  ev->add_flag("--fresh", eval_fresh,
               "Evaluate a freshly initialized model instead of a checkpoint");

  CLI::App* stats = app.add_subcommand(
      "bn-stats", "Weak/strong normalization bank divergence report");
  add_common(stats, stats_o, "bn-stats");
  stats->add_option("--model", stats_model,
                    "Checkpoint to report on (default: <out>/teacher)");

  CLI::App* prev = app.add_subcommand(
      "aug-preview", "Write weak/strong augmentation examples for inspection");
  add_common(prev, prev_o, "aug-preview");
  prev->add_option("--count", preview_count, "Number of images to preview")
      ->capture_default_str();

  CLI::App* abl = app.add_subcommand(
      "ablate", "Normalization-variant and data-group comparison grids");
  add_common(abl, abl_o, "ablate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o);
    if (teach->parsed()) return cmd_train_teacher(teach_o);
    if (pseudo->parsed()) return cmd_pseudo_label(pseudo_o, pseudo_model);
    if (student->parsed())
      return cmd_train_student(student_o, student_manifest, student_init);
    if (iter->parsed()) return cmd_iterate(iter_o);
    if (ev->parsed()) return cmd_eval(eval_o, eval_model, eval_fresh);
    if (stats->parsed()) return cmd_bn_stats(stats_o, stats_model);
    if (prev->parsed()) return cmd_aug_preview(prev_o, preview_count);
    if (abl->parsed()) return cmd_ablate(abl_o);
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
