#include "sslseg/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>

#include "sslseg/errors.hpp"
#include "sslseg/ops.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

namespace {

TensorPtr kaiming_kernel(int out_c, int in_c, int kh, int kw, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (in_c * kh * kw));
  TensorPtr k = make_tensor({out_c, in_c, kh, kw}, 0.0, true);
  for (double& v : k->values) v = rng.normal(0.0, stddev);
  return k;
}

}  // namespace

MicroSegNet MicroSegNet::create(const ModelConfig& config,
                                std::uint64_t seed) {
  if (config.features < 1 || config.classes < 2 || config.in_channels < 1)
    throw config_error("MicroSegNet: features >= 1, classes >= 2 required");
  const int f = config.features;
  MicroSegNet net;
  net.config = config;
  Rng rng = derive_rng(seed, 0xC0DE);
  net.stem_k = kaiming_kernel(f, config.in_channels, 3, 3, rng);
  net.down1_k = kaiming_kernel(2 * f, f, 3, 3, rng);
  net.down2_k = kaiming_kernel(4 * f, 2 * f, 3, 3, rng);
  net.middle_k = kaiming_kernel(4 * f, 4 * f, 3, 3, rng);
  net.head_k = kaiming_kernel(config.classes, 4 * f, 1, 1, rng);
  net.head_b = make_tensor({config.classes}, 0.0, true);
  net.stem_bn = DsbnState::create(f, config.bn_momentum, config.bn_epsilon);
  net.down1_bn =
      DsbnState::create(2 * f, config.bn_momentum, config.bn_epsilon);
  net.down2_bn =
      DsbnState::create(4 * f, config.bn_momentum, config.bn_epsilon);
  net.middle_bn =
      DsbnState::create(4 * f, config.bn_momentum, config.bn_epsilon);
  return net;
}

std::vector<TensorPtr> MicroSegNet::parameters() {
  return {stem_k,          down1_k,        down2_k,         middle_k,
          head_k,          head_b,         stem_bn.gamma,   stem_bn.beta,
          down1_bn.gamma,  down1_bn.beta,  down2_bn.gamma,  down2_bn.beta,
          middle_bn.gamma, middle_bn.beta};
}

std::vector<std::pair<std::string, DsbnState*>> MicroSegNet::bn_layers() {
  return {{"stem", &stem_bn},
          {"down1", &down1_bn},
          {"down2", &down2_bn},
          {"middle", &middle_bn}};
}

std::vector<std::pair<std::string, const DsbnState*>> MicroSegNet::bn_layers()
    const {
  return {{"stem", &stem_bn},
          {"down1", &down1_bn},
          {"down2", &down2_bn},
          {"middle", &middle_bn}};
}

namespace {

TensorPtr copy_tensor(const TensorPtr& t) {
  TensorPtr out = make_tensor(t->shape, t->values, t->requires_grad);
  return out;
}

DsbnState copy_bn(const DsbnState& bn) {
  DsbnState out = bn;  // copies banks, counters and settings
  out.gamma = copy_tensor(bn.gamma);
  out.beta = copy_tensor(bn.beta);
  return out;
}

}  // namespace

MicroSegNet clone_model(const MicroSegNet& net) {
  MicroSegNet out;
  out.config = net.config;
  out.stem_k = copy_tensor(net.stem_k);
  out.down1_k = copy_tensor(net.down1_k);
  out.down2_k = copy_tensor(net.down2_k);
  out.middle_k = copy_tensor(net.middle_k);
  out.head_k = copy_tensor(net.head_k);
  out.head_b = copy_tensor(net.head_b);
  out.stem_bn = copy_bn(net.stem_bn);
  out.down1_bn = copy_bn(net.down1_bn);
  out.down2_bn = copy_bn(net.down2_bn);
  out.middle_bn = copy_bn(net.middle_bn);
  return out;
}

namespace {

TensorPtr run_net(Tape& tape, MicroSegNet& net, const TensorPtr& input,
                  bool train, BranchTag tag, BnMode mode) {
  if (input->shape.size() != 4)
    throw dimension_error("forward: input must be [N,C,H,W]");
  if (input->dim(1) != net.config.in_channels)
    throw dimension_error("forward: expected " +
                          std::to_string(net.config.in_channels) +
                          " input channels, got " +
                          std::to_string(input->dim(1)));
  const int h = input->dim(2), w = input->dim(3);
  if (h % 4 != 0 || w % 4 != 0)
    throw dimension_error("forward: spatial size " + std::to_string(h) + "x" +
                          std::to_string(w) + " is not divisible by 4");

  auto block = [&](const TensorPtr& in, const TensorPtr& kernel,
                   DsbnState& bn, int stride, int pad, int dil) {
    TensorPtr y = conv2d(tape, in, kernel, stride, pad, dil);
    y = train ? bn_forward_train(tape, y, bn, tag, mode)
              : bn_forward_eval(y, bn);
    return relu(tape, y);
  };
  TensorPtr y = block(input, net.stem_k, net.stem_bn, 1, 1, 1);
  y = block(y, net.down1_k, net.down1_bn, 2, 1, 1);
  y = block(y, net.down2_k, net.down2_bn, 2, 1, 1);
  y = block(y, net.middle_k, net.middle_bn, 1, 2, 2);
  y = resize_bilinear(tape, y, h, w);
  y = conv2d(tape, y, net.head_k, 1, 0);
  return add_channel_bias(tape, y, net.head_b);
}

}  // namespace

TensorPtr forward_train(Tape& tape, MicroSegNet& net, const TensorPtr& input,
                        BranchTag tag, BnMode mode) {
  return run_net(tape, net, input, true, tag, mode);
}

TensorPtr forward_eval(MicroSegNet& net, const TensorPtr& input) {
  Tape silent;
  silent.set_recording(false);
  return run_net(silent, net, input, false, BranchTag::Weak, BnMode::Dsbn);
}

// --- optimization ---------------------------------------------------------

double poly_lr(double base, long iter, long iter_max, double power) {
  if (iter_max < 1 || iter < 0 || iter > iter_max)
    throw config_error("poly_lr: need 0 <= iter <= iter_max, iter_max >= 1");
  return base * std::pow(1.0 - static_cast<double>(iter) /
                                   static_cast<double>(iter_max),
                         power);
}

void sgd_step(SgdState& opt, const std::vector<TensorPtr>& params,
              double lr) {
  if (opt.velocity.empty()) opt.velocity.resize(params.size());
  if (opt.velocity.size() != params.size())
    throw dimension_error("sgd_step: optimizer tracks " +
                          std::to_string(opt.velocity.size()) +
                          " parameters, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    std::vector<double>& v = opt.velocity[i];
    if (v.empty()) v.assign(p.values.size(), 0.0);
    if (v.size() != p.values.size())
      throw dimension_error("sgd_step: velocity size mismatch at parameter " +
                            std::to_string(i));
    const bool has_g = p.has_grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double g = has_g ? p.grad[j] : 0.0;
      v[j] = opt.options.momentum * v[j] + g +
             opt.options.weight_decay * p.values[j];
      p.values[j] -= lr * v[j];
    }
  }
}

// --- checkpoints ----------------------------------------------------------

namespace {

struct Entry {
  std::string name;
  Shape shape;
  const double* data;
  long count;
};

void push_tensor(std::vector<Entry>& entries, const std::string& name,
                 const TensorPtr& t) {
  entries.push_back({name, t->shape, t->values.data(), t->numel()});
}

void push_vector(std::vector<Entry>& entries, const std::string& name,
                 const std::vector<double>& v) {
  entries.push_back({name,
                     {static_cast<int>(v.size())},
                     v.data(),
                     static_cast<long>(v.size())});
}

std::vector<Entry> collect_entries(const MicroSegNet& net,
                                   const SgdState* opt, double* iter_box,
                                   std::vector<std::vector<double>>& counters) {
  std::vector<Entry> entries;
  entries.push_back({"meta.iter", {1}, iter_box, 1});
  push_tensor(entries, "stem.kernel", net.stem_k);
  push_tensor(entries, "down1.kernel", net.down1_k);
  push_tensor(entries, "down2.kernel", net.down2_k);
  push_tensor(entries, "middle.kernel", net.middle_k);
  push_tensor(entries, "head.kernel", net.head_k);
  push_tensor(entries, "head.bias", net.head_b);
  counters.clear();
  counters.reserve(4);
  for (const auto& [name, bn] : net.bn_layers()) {
    push_tensor(entries, name + ".bn.gamma", bn->gamma);
    push_tensor(entries, name + ".bn.beta", bn->beta);
    push_vector(entries, name + ".bn.weak_mean", bn->weak_mean);
    push_vector(entries, name + ".bn.weak_var", bn->weak_var);
    push_vector(entries, name + ".bn.strong_mean", bn->strong_mean);
    push_vector(entries, name + ".bn.strong_var", bn->strong_var);
    counters.push_back({static_cast<double>(bn->weak_updates),
                        static_cast<double>(bn->strong_updates)});
    push_vector(entries, name + ".bn.updates", counters.back());
  }
  if (opt)
    for (std::size_t i = 0; i < opt->velocity.size(); ++i)
      push_vector(entries, "opt.velocity." + std::to_string(i),
                  opt->velocity[i]);
  return entries;
}

}  // namespace

void save_checkpoint(const std::string& path, const MicroSegNet& net,
                     const SgdState* opt, long iter) {
  double iter_box = static_cast<double>(iter);
  std::vector<std::vector<double>> counters;
  const std::vector<Entry> entries =
      collect_entries(net, opt, &iter_box, counters);

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open " + path + " for writing");
  std::fprintf(f, "SSLSEG1\n%zu\n", entries.size());
  long offset = 0;
  for (const Entry& e : entries) {
    std::fprintf(f, "%s %zu", e.name.c_str(), e.shape.size());
    for (int d : e.shape) std::fprintf(f, " %d", d);
    std::fprintf(f, " %ld\n", offset);
    offset += e.count;
  }
  std::fprintf(f, "DATA\n");
  bool ok = true;
  for (const Entry& e : entries)
    ok = ok && std::fwrite(e.data, sizeof(double),
                           static_cast<std::size_t>(e.count),
                           f) == static_cast<std::size_t>(e.count);
  std::fclose(f);
  if (!ok) throw io_error("short write to " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, MicroSegNet& net,
                               SgdState* opt) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw io_error("cannot open " + path);
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  auto read_line = [&]() {
    std::string line;
    int ch;
    while ((ch = std::fgetc(f)) != EOF && ch != '\n')
      line.push_back(static_cast<char>(ch));
    if (line.empty() && ch == EOF)
      throw format_error(path + ": truncated checkpoint header");
    return line;
  };

  if (read_line() != "SSLSEG1")
    throw format_error(path + ": not a checkpoint file");
  std::size_t n_entries = 0;
  {
    std::istringstream in(read_line());
    if (!(in >> n_entries) || n_entries == 0 || n_entries > 4096)
      throw format_error(path + ": bad entry count");
  }
  struct Meta {
    Shape shape;
    long offset;
    long count;
  };
  std::map<std::string, Meta> index;
  for (std::size_t i = 0; i < n_entries; ++i) {
    std::istringstream in(read_line());
    std::string name;
    std::size_t rank;
    if (!(in >> name >> rank) || rank > 8)
      throw format_error(path + ": malformed manifest row");
    Meta m;
    m.count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      int v;
      if (!(in >> v) || v < 0) throw format_error(path + ": bad dimension");
      m.shape.push_back(v);
      m.count *= v;
    }
    if (!(in >> m.offset)) throw format_error(path + ": missing offset");
    index[name] = std::move(m);
  }
  if (read_line() != "DATA")
    throw format_error(path + ": missing data marker");
  const long payload_start = std::ftell(f);

  auto fetch = [&](const std::string& name, double* dst, long count,
                   const Shape* expect) {
    auto it = index.find(name);
    if (it == index.end())
      throw format_error(path + ": checkpoint lacks entry '" + name + "'");
    if (it->second.count != count ||
        (expect && it->second.shape != *expect))
      throw dimension_error(path + ": entry '" + name +
                            "' does not match this architecture");
    if (std::fseek(f, payload_start +
                          it->second.offset *
                              static_cast<long>(sizeof(double)),
                   SEEK_SET) != 0)
      throw format_error(path + ": seek failed");
    if (std::fread(dst, sizeof(double), static_cast<std::size_t>(count), f) !=
        static_cast<std::size_t>(count))
      throw format_error(path + ": truncated payload at '" + name + "'");
  };
  auto fetch_tensor = [&](const std::string& name, const TensorPtr& t) {
    fetch(name, t->values.data(), t->numel(), &t->shape);
  };
  auto fetch_vec = [&](const std::string& name, std::vector<double>& v) {
    fetch(name, v.data(), static_cast<long>(v.size()), nullptr);
  };

  double iter_box = 0;
  fetch("meta.iter", &iter_box, 1, nullptr);
  fetch_tensor("stem.kernel", net.stem_k);
  fetch_tensor("down1.kernel", net.down1_k);
  fetch_tensor("down2.kernel", net.down2_k);
  fetch_tensor("middle.kernel", net.middle_k);
  fetch_tensor("head.kernel", net.head_k);
  fetch_tensor("head.bias", net.head_b);
  for (auto& [name, bn] : net.bn_layers()) {
    fetch_tensor(name + ".bn.gamma", bn->gamma);
    fetch_tensor(name + ".bn.beta", bn->beta);
    fetch_vec(name + ".bn.weak_mean", bn->weak_mean);
    fetch_vec(name + ".bn.weak_var", bn->weak_var);
    fetch_vec(name + ".bn.strong_mean", bn->strong_mean);
    fetch_vec(name + ".bn.strong_var", bn->strong_var);
    std::vector<double> counters(2, 0.0);
    fetch_vec(name + ".bn.updates", counters);
    bn->weak_updates = std::lround(counters[0]);
    bn->strong_updates = std::lround(counters[1]);
  }

  CheckpointInfo info;
  info.iter = std::lround(iter_box);
  info.had_optimizer = index.count("opt.velocity.0") > 0;
  if (opt) {
    opt->velocity.clear();
    if (info.had_optimizer) {
      for (std::size_t i = 0;; ++i) {
        auto it = index.find("opt.velocity." + std::to_string(i));
        if (it == index.end()) break;
        std::vector<double> v(static_cast<std::size_t>(it->second.count));
        fetch_vec("opt.velocity." + std::to_string(i), v);
        opt->velocity.push_back(std::move(v));
      }
    }
  }
  return info;
}

}  // namespace sslseg
