#include "sslseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "sslseg/errors.hpp"

namespace sslseg {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw config_error("config key '" + key + "': bad value '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) bad_value(key, value);
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  if (value.empty()) bad_value(key, value);
  char* end = nullptr;
  double out = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size()) bad_value(key, value);
  return out;
}

// One recognized key: how to read it from text and write it back.
struct KeyDef {
  std::string name;  // "seed" or "section.key"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

KeyDef int_key(std::string name, int RunConfig::* field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            long long x = parse_int(name, v);
            if (x < -(1LL << 31) || x > (1LL << 31) - 1) bad_value(name, v);
            c.*field = static_cast<int>(x);
          },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

KeyDef range_int_key(std::string name, int AugmentRanges::* field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            c.ranges.*field = static_cast<int>(parse_int(name, v));
          },
          [field](const RunConfig& c) {
            return std::to_string(c.ranges.*field);
          }};
}

KeyDef dbl_key(std::string name, double RunConfig::* field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            c.*field = parse_double(name, v);
          },
          [field](const RunConfig& c) { return fmt_double(c.*field); }};
}

KeyDef range_key(std::string name, double AugmentRanges::* field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            c.ranges.*field = parse_double(name, v);
          },
          [field](const RunConfig& c) { return fmt_double(c.ranges.*field); }};
}

KeyDef str_key(std::string name, std::string RunConfig::* field,
               std::vector<std::string> allowed = {}) {
  return {name,
          [name, field, allowed](RunConfig& c, const std::string& v) {
            if (!allowed.empty()) {
              bool ok = false;
              for (const std::string& a : allowed) ok = ok || a == v;
              if (!ok) bad_value(name, v);
            }
            c.*field = v;
          },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    t.push_back({"seed",
                 [](RunConfig& c, const std::string& v) {
                   unsigned long long x = 0;
                   auto [ptr, ec] =
                       std::from_chars(v.data(), v.data() + v.size(), x);
                   if (ec != std::errc{} || ptr != v.data() + v.size())
                     bad_value("seed", v);
                   c.seed = x;
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    t.push_back(str_key("out", &RunConfig::out));

    t.push_back(str_key("data.dir", &RunConfig::data_dir));
    t.push_back(int_key("data.image_size", &RunConfig::image_size));
    t.push_back(int_key("data.classes", &RunConfig::classes));
    t.push_back(int_key("data.train_images", &RunConfig::train_images));
    t.push_back(int_key("data.val_images", &RunConfig::val_images));
    t.push_back(dbl_key("data.labeled_fraction", &RunConfig::labeled_fraction));
    t.push_back(int_key("data.shapes_min", &RunConfig::shapes_min));
    t.push_back(int_key("data.shapes_max", &RunConfig::shapes_max));
    t.push_back(dbl_key("data.background_noise", &RunConfig::background_noise));
    t.push_back(dbl_key("data.color_jitter", &RunConfig::color_jitter));

    t.push_back(int_key("model.features", &RunConfig::features));
    t.push_back(dbl_key("model.bn_momentum", &RunConfig::bn_momentum));
    t.push_back(dbl_key("model.bn_epsilon", &RunConfig::bn_epsilon));

    t.push_back(int_key("train.teacher_iters", &RunConfig::teacher_iters));
    t.push_back(int_key("train.student_iters", &RunConfig::student_iters));
    t.push_back(int_key("train.batch_labeled", &RunConfig::batch_labeled));
    t.push_back(int_key("train.batch_pseudo", &RunConfig::batch_pseudo));
    t.push_back(int_key("train.crop", &RunConfig::crop));
    t.push_back(dbl_key("train.base_lr", &RunConfig::base_lr));
    t.push_back(dbl_key("train.lr_power", &RunConfig::lr_power));
    t.push_back(dbl_key("train.momentum", &RunConfig::momentum));
    t.push_back(dbl_key("train.weight_decay", &RunConfig::weight_decay));
    t.push_back(dbl_key("train.lambda_scl", &RunConfig::lambda_scl));
    t.push_back(dbl_key("train.scl_clamp", &RunConfig::scl_clamp));
    t.push_back(int_key("train.rounds", &RunConfig::rounds));
    t.push_back(int_key("train.patience", &RunConfig::patience));
    t.push_back(int_key("train.log_every", &RunConfig::log_every));
    t.push_back(str_key("train.bn_mode", &RunConfig::bn_mode,
                        {"dsbn", "shared", "frozen"}));
    t.push_back(
        str_key("train.pseudo_loss", &RunConfig::pseudo_loss, {"scl", "ce"}));
    t.push_back(str_key("train.pseudo_augment", &RunConfig::pseudo_augment,
                        {"strong", "weak"}));

    t.push_back(int_key("augment.n_ops", &RunConfig::n_ops));
    t.push_back(range_key("augment.contrast_gamma_min",
                          &AugmentRanges::contrast_gamma_min));
    t.push_back(range_key("augment.contrast_gamma_max",
                          &AugmentRanges::contrast_gamma_max));
    t.push_back(range_key("augment.contrast_linear_min",
                          &AugmentRanges::contrast_linear_min));
    t.push_back(range_key("augment.contrast_linear_max",
                          &AugmentRanges::contrast_linear_max));
    t.push_back(
        range_key("augment.brightness_delta", &AugmentRanges::brightness_delta));
    t.push_back(range_key("augment.hue_shift", &AugmentRanges::hue_shift));
    t.push_back(
        range_key("augment.saturation_min", &AugmentRanges::saturation_min));
    t.push_back(
        range_key("augment.saturation_max", &AugmentRanges::saturation_max));
    t.push_back(
        range_key("augment.blur_sigma_min", &AugmentRanges::blur_sigma_min));
    t.push_back(
        range_key("augment.blur_sigma_max", &AugmentRanges::blur_sigma_max));
    t.push_back(range_key("augment.noise_gau_min", &AugmentRanges::noise_gau_min));
    t.push_back(range_key("augment.noise_gau_max", &AugmentRanges::noise_gau_max));
    t.push_back(range_key("augment.dropout_min", &AugmentRanges::dropout_min));
    t.push_back(range_key("augment.dropout_max", &AugmentRanges::dropout_max));
    t.push_back(range_int_key("augment.coarse_dropout_max_rects",
                              &AugmentRanges::coarse_dropout_max_rects));
    t.push_back(range_key("augment.coarse_dropout_max_frac",
                          &AugmentRanges::coarse_dropout_max_frac));
    t.push_back(range_key("augment.multiply_min", &AugmentRanges::multiply_min));
    t.push_back(range_key("augment.multiply_max", &AugmentRanges::multiply_max));
    t.push_back(
        range_key("augment.salt_pepper_min", &AugmentRanges::salt_pepper_min));
    t.push_back(
        range_key("augment.salt_pepper_max", &AugmentRanges::salt_pepper_max));
    t.push_back(range_key("augment.solarize_min", &AugmentRanges::solarize_min));
    t.push_back(range_key("augment.solarize_max", &AugmentRanges::solarize_max));
    t.push_back(range_int_key("augment.jpeg_quality_min",
                              &AugmentRanges::jpeg_quality_min));
    t.push_back(range_int_key("augment.jpeg_quality_max",
                              &AugmentRanges::jpeg_quality_max));
    t.push_back(range_key("augment.scale_min", &AugmentRanges::scale_min));
    t.push_back(range_key("augment.scale_max", &AugmentRanges::scale_max));
    t.push_back(range_key("augment.flip_prob", &AugmentRanges::flip_prob));

    t.push_back({"tta.scales",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> scales;
                   std::stringstream ss(v);
                   std::string part;
                   while (std::getline(ss, part, ','))
                     scales.push_back(parse_double("tta.scales", trim(part)));
                   if (scales.empty()) bad_value("tta.scales", v);
                   c.tta_scales = std::move(scales);
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.tta_scales.size(); ++i) {
                     if (i) out += ",";
                     out += fmt_double(c.tta_scales[i]);
                   }
                   return out;
                 }});
    t.push_back({"tta.flip",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "true" || v == "1")
                     c.tta_flip = true;
                   else if (v == "false" || v == "0")
                     c.tta_flip = false;
                   else
                     bad_value("tta.flip", v);
                 },
                 [](const RunConfig& c) {
                   return std::string(c.tta_flip ? "true" : "false");
                 }});
    return t;
  }();
  return table;
}

const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& k : key_table())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::string section;
  bool saw_section = false;
  std::stringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error("config line " + std::to_string(lineno) +
                           ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "train" &&
          section != "augment" && section != "tta")
        throw config_error("config line " + std::to_string(lineno) +
                           ": unknown section '" + section + "'");
      saw_section = true;
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(lineno) +
                         ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw config_error("config line " + std::to_string(lineno) +
                         ": empty key");
    std::string full = saw_section ? section + "." + key : key;
    const KeyDef* def = find_key(full);
    if (def == nullptr)
      throw config_error("unknown config key '" + full + "' (line " +
                         std::to_string(lineno) + ")");
    def->set(config, value);
  }
  return config;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw io_error("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const KeyDef& k : key_table()) {
    std::size_t dot = k.name.find('.');
    std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    std::string name = dot == std::string::npos ? k.name : k.name.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + k.get(config) + "\n";
  }
  return out;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw config_error("override '" + assignment + "': expected key=value");
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  const KeyDef* def = find_key(key);
  if (def == nullptr) throw config_error("unknown config key '" + key + "'");
  def->set(config, value);
}

std::vector<std::string> config_key_names() {
  std::vector<std::string> names;
  for (const KeyDef& k : key_table()) names.push_back(k.name);
  return names;
}

std::string resolved_data_dir(const RunConfig& config) {
  if (!config.data_dir.empty()) return config.data_dir;
  return config.out + "/dataset";
}

SyntheticSpec to_synthetic_spec(const RunConfig& config) {
  if (config.image_size < 8 || config.image_size % 4 != 0)
    bad_value("data.image_size", std::to_string(config.image_size));
  if (config.classes < 2 || config.classes > 254)
    bad_value("data.classes", std::to_string(config.classes));
  if (config.train_images < 1)
    bad_value("data.train_images", std::to_string(config.train_images));
  if (config.val_images < 1)
    bad_value("data.val_images", std::to_string(config.val_images));
  if (config.shapes_min < 1 || config.shapes_max < config.shapes_min)
    bad_value("data.shapes_max", std::to_string(config.shapes_max));
  if (config.background_noise < 0.0 || config.background_noise > 0.5)
    bad_value("data.background_noise", fmt_double(config.background_noise));
  if (config.color_jitter < 0.0 || config.color_jitter > 0.5)
    bad_value("data.color_jitter", fmt_double(config.color_jitter));
  SyntheticSpec spec;
  spec.image_size = config.image_size;
  spec.classes = config.classes;
  spec.shapes_min = config.shapes_min;
  spec.shapes_max = config.shapes_max;
  spec.background_noise = config.background_noise;
  spec.color_jitter = config.color_jitter;
  spec.seed = config.seed;
  return spec;
}

ModelConfig to_model_config(const RunConfig& config) {
  if (config.features < 1)
    bad_value("model.features", std::to_string(config.features));
  ModelConfig m;
  m.in_channels = 3;
  m.classes = config.classes;
  m.features = config.features;
  m.bn_momentum = config.bn_momentum;
  m.bn_epsilon = config.bn_epsilon;
  return m;
}

namespace {

TrainConfig base_train_config(const RunConfig& config) {
  TrainConfig t;
  t.batch_labeled = config.batch_labeled;
  t.crop = config.crop;
  t.base_lr = config.base_lr;
  t.lr_power = config.lr_power;
  t.sgd.momentum = config.momentum;
  t.sgd.weight_decay = config.weight_decay;
  t.n_ops = config.n_ops;
  t.lambda_pseudo = config.lambda_scl;
  t.scl_clamp = config.scl_clamp;
  t.ranges = config.ranges;
  t.seed = config.seed;
  t.log_every = config.log_every;
  if (config.bn_mode == "dsbn")
    t.bn_mode = BnMode::Dsbn;
  else if (config.bn_mode == "shared")
    t.bn_mode = BnMode::Shared;
  else
    t.bn_mode = BnMode::Frozen;
  t.pseudo_ce = config.pseudo_loss == "ce";
  t.strong_photometric = config.pseudo_augment == "strong";
  return t;
}

}  // namespace

TrainConfig to_teacher_config(const RunConfig& config) {
  TrainConfig t = base_train_config(config);
  t.iters = config.teacher_iters;
  t.batch_pseudo = 0;
  t.phase = 0;
  return t;
}

TrainConfig to_student_config(const RunConfig& config) {
  TrainConfig t = base_train_config(config);
  t.iters = config.student_iters;
  t.batch_pseudo = config.batch_pseudo;
  t.phase = 1;
  return t;
}

TtaOptions to_tta_options(const RunConfig& config) {
  TtaOptions t;
  t.scales = config.tta_scales;
  t.flip = config.tta_flip;
  return t;
}

IterateConfig to_iterate_config(const RunConfig& config) {
  if (config.rounds < 0)
    bad_value("train.rounds", std::to_string(config.rounds));
  if (config.patience < 1)
    bad_value("train.patience", std::to_string(config.patience));
  IterateConfig it;
  it.teacher = to_teacher_config(config);
  it.student = to_student_config(config);
  it.tta = to_tta_options(config);
  it.rounds = config.rounds;
  it.patience = config.patience;
  it.model_seed = config.seed;
  return it;
}

}  // namespace sslseg
