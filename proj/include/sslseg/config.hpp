#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sslseg/augment.hpp"
#include "sslseg/datahub.hpp"
#include "sslseg/pipeline.hpp"

namespace sslseg {

// Every experiment knob in one flat struct. The text form is an ini-style
// file: global keys first, then sections [data] [model] [train] [augment]
// [tta]. Unknown keys or sections are errors, so typos cannot pass silently.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "runs";

  // [data]
  std::string data_dir;  // empty: <out>/dataset
  int image_size = 64;
  int classes = 4;
  int train_images = 256;
  int val_images = 64;
  double labeled_fraction = 0.125;
  int shapes_min = 2, shapes_max = 5;
  double background_noise = 0.08;
  double color_jitter = 0.15;

  // [model]
  int features = 16;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  // [train]
  int teacher_iters = 500;
  int student_iters = 500;
  int batch_labeled = 8;
  int batch_pseudo = 8;
  int crop = 64;
  double base_lr = 0.01;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda_scl = 1.0;
  double scl_clamp = -4.0;
  int rounds = 2;
  int patience = 2;
  int log_every = 50;
  std::string bn_mode = "dsbn";         // dsbn | shared | frozen
  std::string pseudo_loss = "scl";      // scl | ce
  std::string pseudo_augment = "strong";  // strong | weak

  // [augment]
  int n_ops = 2;
  AugmentRanges ranges;

  // [tta]
  std::vector<double> tta_scales{0.5, 0.75, 1.0, 1.5, 1.75};
  bool tta_flip = true;

  bool operator==(const RunConfig&) const = default;
};

// Parses config text; starts from defaults. Throws config_error naming the
// offending line or key.
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Canonical text form. dump_config(parse_config(dump_config(c))) is
// byte-identical to dump_config(c).
std::string dump_config(const RunConfig& config);

// Applies one "key=value" override ("seed=7" or "train.base_lr=0.02").
void apply_override(RunConfig& config, const std::string& assignment);

// One "section.key" (or bare global key) per recognized key, in file order;
// used by the help text so the listing cannot fall out of date.
std::vector<std::string> config_key_names();

// Mappings onto the library configs; each validates its slice and reports
// bad values by key name.
std::string resolved_data_dir(const RunConfig& config);
SyntheticSpec to_synthetic_spec(const RunConfig& config);
ModelConfig to_model_config(const RunConfig& config);
TrainConfig to_teacher_config(const RunConfig& config);
TrainConfig to_student_config(const RunConfig& config);
TtaOptions to_tta_options(const RunConfig& config);
IterateConfig to_iterate_config(const RunConfig& config);

}  // namespace sslseg
