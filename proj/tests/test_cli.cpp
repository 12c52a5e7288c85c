#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sslseg/config.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"

using namespace sslseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "sslseg_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Runs the tool, captures combined stdout/stderr, returns the exit code.
int run_cli(const std::string& args, std::string* output = nullptr,
            const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path cap = fs::temp_directory_path() / "sslseg_cli_tests" /
                       ("capture_" + std::to_string(counter++) + ".txt");
  fs::create_directories(cap.parent_path());
  const std::string cmd = env_prefix + std::string(SSLSEG_CLI_PATH) + " " +
                          args + " > " + cap.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  if (output != nullptr) *output = slurp(cap);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

// Small-everything override block shared by the end-to-end chains.
std::string tiny_args(const fs::path& out) {
  return "--out " + out.string() +
         " --set data.image_size=16 --set data.train_images=6"
         " --set data.val_images=3 --set data.labeled_fraction=0.5"
         " --set model.features=4 --set train.teacher_iters=4"
         " --set train.student_iters=4 --set train.batch_labeled=2"
         " --set train.batch_pseudo=2 --set train.crop=16"
         " --set train.log_every=2 --set train.rounds=1"
         " --set tta.scales=1.0 --set tta.flip=false";
}

}  // namespace

TEST_CASE("defaults survive a dump and re-parse byte-identically") {
  const RunConfig defaults;
  const std::string text = dump_config(defaults);
  RunConfig reparsed = parse_config(text);
  CHECK(reparsed == defaults);
  CHECK(dump_config(reparsed) == text);
  CHECK(parse_config("") == defaults);

  // The same holds after touching every kind of field.
  RunConfig edited = defaults;
  edited.seed = 17;
  edited.out = "elsewhere";
  edited.data_dir = "some/data";
  edited.labeled_fraction = 0.25;
  edited.features = 9;
  edited.bn_mode = "frozen";
  edited.pseudo_loss = "ce";
  edited.ranges.blur_sigma_max = 3.5;
  edited.ranges.jpeg_quality_min = 40;
  edited.tta_scales = {0.5, 1.0};
  edited.tta_flip = false;
  RunConfig round = parse_config(dump_config(edited));
  CHECK(round == edited);
  CHECK(dump_config(round) == dump_config(edited));
}

TEST_CASE("the shipped default config file matches the built-in defaults") {
  RunConfig shipped = parse_config_file(SSLSEG_DEFAULT_INI);
  CHECK(shipped == RunConfig{});
}

TEST_CASE("config text parses sections, comments, and values") {
  RunConfig c = parse_config(
      "# experiment\n"
      "seed = 42\n"
      "out = myruns\n"
      "\n"
      "[data]\n"
      "image_size = 32\n"
      "labeled_fraction = 0.5\n"
      "[train]\n"
      "base_lr = 0.02\n"
      "bn_mode = shared\n"
      "[tta]\n"
      "scales = 0.5, 1.0, 2.0\n"
      "flip = false\n");
  CHECK(c.seed == 42);
  CHECK(c.out == "myruns");
  CHECK(c.image_size == 32);
  CHECK(c.labeled_fraction == 0.5);
  CHECK(c.base_lr == 0.02);
  CHECK(c.bn_mode == "shared");
  CHECK(c.tta_scales == std::vector<double>{0.5, 1.0, 2.0});
  CHECK(c.tta_flip == false);
  // Untouched keys keep their defaults.
  CHECK(c.classes == 4);
  CHECK(c.n_ops == 2);
}

TEST_CASE("typos and bad values are rejected by name") {
  CHECK_THROWS_WITH_AS(parse_config("[data]\nimage_sty = 3\n"),
                       doctest::Contains("data.image_sty"), config_error);
  CHECK_THROWS_WITH_AS(parse_config("[paint]\nx = 1\n"),
                       doctest::Contains("paint"), config_error);
  CHECK_THROWS_WITH_AS(parse_config("just words\n"),
                       doctest::Contains("key = value"), config_error);
  CHECK_THROWS_WITH_AS(parse_config("[train]\nbase_lr = fast\n"),
                       doctest::Contains("train.base_lr"), config_error);
  CHECK_THROWS_WITH_AS(parse_config("[train]\nbn_mode = groupnorm\n"),
                       doctest::Contains("groupnorm"), config_error);
  CHECK_THROWS_WITH_AS(parse_config("[tta]\nflip = maybe\n"),
                       doctest::Contains("tta.flip"), config_error);
  CHECK_THROWS_AS(parse_config("[data]\nimage_size = 16x16\n"), config_error);
  CHECK_THROWS_AS(parse_config("seed = -3\n"), config_error);
  // Keys outside their section are unknown.
  CHECK_THROWS_AS(parse_config("[data]\nseed = 3\n"), config_error);

  RunConfig c;
  apply_override(c, "train.crop=32");
  CHECK(c.crop == 32);
  apply_override(c, "seed=9");
  CHECK(c.seed == 9);
  CHECK_THROWS_AS(apply_override(c, "train.crop"), config_error);
  CHECK_THROWS_AS(apply_override(c, "nope=1"), config_error);
}

TEST_CASE("library configs are derived with validation") {
  RunConfig c;
  c.seed = 5;
  const SyntheticSpec spec = to_synthetic_spec(c);
  CHECK(spec.image_size == 64);
  CHECK(spec.seed == 5);

  const TrainConfig teacher = to_teacher_config(c);
  CHECK(teacher.batch_pseudo == 0);
  CHECK(teacher.phase == 0);
  CHECK(teacher.iters == c.teacher_iters);
  CHECK(teacher.bn_mode == BnMode::Dsbn);

  c.bn_mode = "shared";
  c.pseudo_loss = "ce";
  c.pseudo_augment = "weak";
  const TrainConfig student = to_student_config(c);
  CHECK(student.phase == 1);
  CHECK(student.batch_pseudo == 8);
  CHECK(student.bn_mode == BnMode::Shared);
  CHECK(student.pseudo_ce);
  CHECK_FALSE(student.strong_photometric);

  const IterateConfig it = to_iterate_config(c);
  CHECK(it.rounds == 2);
  CHECK(it.model_seed == 5);
  CHECK(it.tta.scales.size() == 5);

  RunConfig bad = c;
  bad.image_size = 30;
  CHECK_THROWS_WITH_AS(to_synthetic_spec(bad),
                       doctest::Contains("data.image_size"), config_error);
  bad = c;
  bad.classes = 1;
  CHECK_THROWS_AS(to_synthetic_spec(bad), config_error);
  bad = c;
  bad.features = 0;
  CHECK_THROWS_AS(to_model_config(bad), config_error);
  bad = c;
  bad.patience = 0;
  CHECK_THROWS_AS(to_iterate_config(bad), config_error);

  CHECK(resolved_data_dir(c) == "runs/dataset");
  c.data_dir = "/tmp/d";
  CHECK(resolved_data_dir(c) == "/tmp/d");
}

TEST_CASE("help lists the subcommands and the config keys") {
  std::string out;
  CHECK(run_cli("--help", &out) == 0);
  for (const char* sub : {"gen-data", "train-teacher", "pseudo-label",
                          "train-student", "iterate", "eval", "bn-stats",
                          "aug-preview", "ablate"})
    CHECK(out.find(sub) != std::string::npos);

  CHECK(run_cli("train-teacher --help", &out) == 0);
  for (const std::string& key : config_key_names())
    CHECK(out.find(key) != std::string::npos);

  CHECK(run_cli("", &out) == 1);          // a subcommand is required
  CHECK(run_cli("--bogus", &out) == 1);   // unknown flag
  CHECK(run_cli("eval --set data.bogus=1", &out) == 1);
  CHECK(out.find("data.bogus") != std::string::npos);
}

TEST_CASE("missing inputs are reported with the right exit codes") {
  const fs::path out = fresh_dir("missing");
  std::string text;
  CHECK(run_cli("eval --out " + out.string(), &text) == 1);
  CHECK(text.find("gen-data") != std::string::npos);
  CHECK(run_cli("train-teacher --out " + out.string(), &text) == 1);
  // A config file that does not exist is an I/O problem.
  CHECK(run_cli("eval --config " + (out / "nope.ini").string(), &text) == 2);
}

TEST_CASE("generation is idempotent and honors seed precedence") {
  const fs::path out = fresh_dir("gen");
  const std::string small =
      "--out " + out.string() +
      " --set data.image_size=16 --set data.train_images=2"
      " --set data.val_images=1";
  std::string text;
  REQUIRE(run_cli("gen-data " + small, &text) == 0);
  const fs::path data = out / "dataset";
  CHECK(fs::exists(data / "manifest.tsv"));
  CHECK(fs::exists(data / "means.txt"));
  CHECK(fs::exists(data / "config.ini"));
  CHECK_FALSE(fs::exists(data / "lock"));  // released on exit
  const std::string manifest = slurp(data / "manifest.tsv");
  const std::string resolved = slurp(data / "config.ini");

  // Re-running reproduces every byte.
  REQUIRE(run_cli("gen-data " + small, &text) == 0);
  CHECK(slurp(data / "manifest.tsv") == manifest);
  CHECK(slurp(data / "config.ini") == resolved);

  // The resolved dump re-parses to the same configuration.
  RunConfig reparsed = parse_config(resolved);
  CHECK(dump_config(reparsed) == resolved);
  CHECK(reparsed.image_size == 16);

  // config file < environment < flag.
  const fs::path cfg = out / "seeded.ini";
  {
    std::ofstream f(cfg);
    f << "seed = 5\nout = " << (out / "env").string()
      << "\n[data]\nimage_size = 16\ntrain_images = 2\nval_images = 1\n";
  }
  REQUIRE(run_cli("gen-data --config " + cfg.string(), &text,
                  "SSLSEG_SEED=7 ") == 0);
  CHECK(slurp(out / "env" / "dataset" / "config.ini")
            .find("seed = 7\n") != std::string::npos);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --seed 9 --out " +
                      (out / "flag").string(),
                  &text, "SSLSEG_SEED=7 ") == 0);
  CHECK(slurp(out / "flag" / "dataset" / "config.ini")
            .find("seed = 9\n") != std::string::npos);
}

TEST_CASE("a held lock blocks a second writer") {
  const fs::path out = fresh_dir("lock");
  REQUIRE(run_cli("gen-data --out " + out.string() +
                  " --set data.image_size=16 --set data.train_images=2"
                  " --set data.val_images=1") == 0);
  fs::create_directories(out / "eval");
  std::ofstream(out / "eval" / "lock") << "held\n";
  std::string text;
  CHECK(run_cli("eval --fresh --out " + out.string(), &text) == 1);
  CHECK(text.find("lock") != std::string::npos);
  fs::remove(out / "eval" / "lock");
  CHECK(run_cli("eval --fresh --out " + out.string(), &text) == 0);
}

TEST_CASE("the teacher, pseudo-label, student chain runs end to end") {
  const fs::path out = fresh_dir("chain");
  const std::string args = tiny_args(out);
  std::string text;
  REQUIRE(run_cli("gen-data " + args, &text) == 0);

  REQUIRE(run_cli("train-teacher " + args, &text) == 0);
  CHECK(fs::exists(out / "teacher" / "checkpoint.ckpt"));
  const std::string curve = slurp(out / "teacher" / "curve.csv");
  CHECK(curve.rfind("step,lr,ce,scl,total\n", 0) == 0);
  // Steps 0 and 2 plus the final step 3.
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 4);

  // Deterministic rerun: identical checkpoint bytes.
  const std::string ckpt = slurp(out / "teacher" / "checkpoint.ckpt");
  REQUIRE(run_cli("train-teacher " + args, &text) == 0);
  CHECK(slurp(out / "teacher" / "checkpoint.ckpt") == ckpt);

  // Student before pseudo-label: a configuration error.
  CHECK(run_cli("train-student " + args, &text) == 1);
  CHECK(text.find("pseudo-label") != std::string::npos);

  REQUIRE(run_cli("pseudo-label " + args, &text) == 0);
  CHECK(text.find("3 of 3 images labeled") != std::string::npos);
  CHECK(fs::exists(out / "pseudo" / "manifest.tsv"));

  REQUIRE(run_cli("train-student " + args, &text) == 0);
  CHECK(fs::exists(out / "student" / "checkpoint.ckpt"));

  REQUIRE(run_cli("eval " + args + " --model " +
                      (out / "student" / "checkpoint.ckpt").string() +
                      " --run eval-student",
                  &text) == 0);
  CHECK(text.find("eval: 3 images, miou ") != std::string::npos);
  const std::string metrics = slurp(out / "eval-student" / "metrics.csv");
  CHECK(metrics.rfind("miou,iou_0,iou_1,iou_2,iou_3\n", 0) == 0);

  // Weak-only teacher: both banks agree, so the divergence report is zero.
  REQUIRE(run_cli("bn-stats " + args, &text) == 0);
  CHECK(text.find("divergence 0 (mean 0, logvar 0)") != std::string::npos);
  CHECK(text.find("strong bank untouched") != std::string::npos);
  CHECK(fs::exists(out / "bn-stats" / "bn_stats.csv"));

  // After student training the strong bank has moved.
  REQUIRE(run_cli("bn-stats " + args + " --model " +
                      (out / "student" / "checkpoint.ckpt").string() +
                      " --run bn-stats-student",
                  &text) == 0);
  CHECK(text.find("strong bank updated") != std::string::npos);
  CHECK(text.find("divergence 0 (") == std::string::npos);
}

TEST_CASE("iterate writes one row per round plus the teacher") {
  const fs::path out = fresh_dir("iterate");
  const std::string args = tiny_args(out);
  std::string text;
  REQUIRE(run_cli("gen-data " + args, &text) == 0);
  REQUIRE(run_cli("iterate " + args, &text) == 0);
  const std::string rounds = slurp(out / "iterate" / "rounds.csv");
  CHECK(rounds.rfind("round,miou,iou_0,iou_1,iou_2,iou_3\n", 0) == 0);
  CHECK(rounds.find("\nteacher,") != std::string::npos);
  CHECK(rounds.find("\nround-1,") != std::string::npos);
  CHECK(std::count(rounds.begin(), rounds.end(), '\n') == 3);
  CHECK(fs::exists(out / "iterate" / "best.ckpt"));
  CHECK(text.find("iterate: best ") != std::string::npos);
}

TEST_CASE("augmentation previews land on disk with their policies") {
  const fs::path out = fresh_dir("preview");
  const std::string args = tiny_args(out);
  std::string text;
  REQUIRE(run_cli("gen-data " + args, &text) == 0);
  REQUIRE(run_cli("aug-preview " + args + " --count 2", &text) == 0);
  int triples = 0;
  for (const auto& entry : fs::directory_iterator(out / "aug-preview"))
    if (entry.path().string().find("_strong.ppm") != std::string::npos)
      ++triples;
  CHECK(triples == 2);
  const std::string policies = slurp(out / "aug-preview" / "policies.csv");
  CHECK(policies.rfind("id,ops\n", 0) == 0);
  CHECK(std::count(policies.begin(), policies.end(), '\n') == 3);
  CHECK(run_cli("aug-preview " + args + " --count 0", &text) == 1);
}

TEST_CASE("the comparison grids produce the full csv") {
  const fs::path out = fresh_dir("ablate");
  const std::string args = tiny_args(out) + " --set train.teacher_iters=2" +
                           " --set train.student_iters=2";
  std::string text;
  REQUIRE(run_cli("gen-data " + args, &text) == 0);
  REQUIRE(run_cli("ablate " + args, &text) == 0);
  const std::string csv = slurp(out / "ablate" / "ablate.csv");
  CHECK(csv.rfind("grid,setting,variant,val_miou\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);
  CHECK(csv.find("bn,dsbn,strong,") != std::string::npos);
  CHECK(csv.find("data,pseudo,saug-dsbn,") != std::string::npos);
}

TEST_CASE("a random-initialized model scores near chance on balanced labels") {
  // Hand-built val set: 50 images of uniform noise, labels drawn uniformly
  // over 4 classes, so every class covers ~a quarter of every image.
  const fs::path out = fresh_dir("baseline");
  const fs::path data = out / "dataset";
  fs::create_directories(data / "images");
  fs::create_directories(data / "labels");
  Rng rng(2024);
  std::vector<Sample> rows;
  for (int i = 0; i < 50; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "val_%03d", i);
    ImageF img(16, 16);
    for (double& v : img.data) v = rng.uniform();
    LabelMap lab(16, 16);
    for (auto& v : lab.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(4));
    Sample s;
    s.id = id;
    s.image_path = (data / "images" / (std::string(id) + ".ppm")).string();
    s.label_path = (data / "labels" / (std::string(id) + ".pgm")).string();
    s.provenance = Provenance::GroundTruth;
    s.split = Split::Val;
    write_image(s.image_path, img);
    write_label(s.label_path, lab);
    rows.push_back(std::move(s));
  }
  write_manifest((data / "manifest.tsv").string(), rows);
  write_means((data / "means.txt").string(), {0.5, 0.5, 0.5});

  double total = 0.0;
  for (int seed = 1; seed <= 5; ++seed) {
    std::string text;
    REQUIRE(run_cli("eval --fresh --out " + out.string() + " --seed " +
                        std::to_string(seed),
                    &text) == 0);
    const std::string marker = "miou ";
    const std::size_t pos = text.find(marker);
    REQUIRE(pos != std::string::npos);
    total += std::stod(text.substr(pos + marker.size()));
  }
  // A fresh net is a collapsed predictor, not a uniform one: constant
  // output floors at 1/16 on balanced labels, and measured means over 5
  // seeds sit at 0.08..0.13. The bounds catch an evaluator that returns
  // garbage or a model that is accidentally trained.
  const double mean = total / 5.0;
  CHECK(mean > 0.05);
  CHECK(mean < 0.25 + 0.15);
}
