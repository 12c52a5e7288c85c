#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sslseg/errors.hpp"
#include "sslseg/gradcheck.hpp"
#include "sslseg/losses.hpp"
#include "sslseg/model.hpp"
#include "sslseg/rng.hpp"

using namespace sslseg;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int features, int classes) {
  ModelConfig c;
  c.features = features;
  c.classes = classes;
  return c;
}

TensorPtr random_image(int n, int c, int h, int w, std::uint64_t seed) {
  TensorPtr t = make_tensor({n, c, h, w});
  Rng rng(seed);
  for (double& v : t->values) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("network shapes follow the stage layout") {
  MicroSegNet net = MicroSegNet::create(tiny_config(16, 4), 1);
  CHECK(net.stem_k->shape == Shape{16, 3, 3, 3});
  CHECK(net.down1_k->shape == Shape{32, 16, 3, 3});
  CHECK(net.down2_k->shape == Shape{64, 32, 3, 3});
  CHECK(net.middle_k->shape == Shape{64, 64, 3, 3});
  CHECK(net.head_k->shape == Shape{4, 64, 1, 1});
  CHECK(net.head_b->shape == Shape{4});
  CHECK(net.parameters().size() == 14);
  for (const TensorPtr& p : net.parameters()) CHECK(p->requires_grad);
  CHECK(net.bn_layers().size() == 4);

  Tape tape;
  TensorPtr out =
      forward_train(tape, net, random_image(2, 3, 16, 24, 7), BranchTag::Weak);
  CHECK(out->shape == Shape{2, 4, 16, 24});
  TensorPtr ev = forward_eval(net, random_image(1, 3, 8, 8, 8));
  CHECK(ev->shape == Shape{1, 4, 8, 8});
}

TEST_CASE("forward validates input geometry") {
  MicroSegNet net = MicroSegNet::create(tiny_config(4, 3), 1);
  Tape tape;
  CHECK_THROWS_AS(
      forward_train(tape, net, random_image(1, 3, 10, 8, 1), BranchTag::Weak),
      dimension_error);
  CHECK_THROWS_AS(
      forward_train(tape, net, random_image(1, 3, 8, 6, 1), BranchTag::Weak),
      dimension_error);
  CHECK_THROWS_AS(
      forward_train(tape, net, random_image(1, 4, 8, 8, 1), BranchTag::Weak),
      dimension_error);
  CHECK_THROWS_AS(forward_eval(net, make_tensor({3, 8, 8})),
                  dimension_error);
  CHECK_THROWS_AS(MicroSegNet::create(tiny_config(0, 3), 1), config_error);
  CHECK_THROWS_AS(MicroSegNet::create(tiny_config(4, 1), 1), config_error);
}

TEST_CASE("initialization is deterministic with fan-in scaling") {
  MicroSegNet a = MicroSegNet::create(tiny_config(16, 4), 42);
  MicroSegNet b = MicroSegNet::create(tiny_config(16, 4), 42);
  MicroSegNet c = MicroSegNet::create(tiny_config(16, 4), 43);
  CHECK(a.stem_k->values == b.stem_k->values);
  CHECK(a.middle_k->values == b.middle_k->values);
  CHECK(a.stem_k->values != c.stem_k->values);

  // middle kernel: fan_in = 64 * 9, expected std sqrt(2 / 576).
  const double expected = std::sqrt(2.0 / 576.0);
  double mean = 0, sq = 0;
  for (double v : a.middle_k->values) {
    mean += v;
    sq += v * v;
  }
  const double n = static_cast<double>(a.middle_k->numel());
  mean /= n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 5.0 * expected / std::sqrt(n));
  CHECK(stddev == doctest::Approx(expected).epsilon(0.05));

  for (double v : a.head_b->values) CHECK(v == 0.0);
  for (double v : a.stem_bn.gamma->values) CHECK(v == 1.0);
  for (double v : a.stem_bn.beta->values) CHECK(v == 0.0);
}

TEST_CASE("training forwards update the routed statistics banks") {
  MicroSegNet net = MicroSegNet::create(tiny_config(4, 3), 3);
  Tape tape;
  forward_train(tape, net, random_image(2, 3, 8, 8, 1), BranchTag::Weak);
  for (auto& [name, bn] : net.bn_layers()) {
    CHECK(bn->weak_updates == 1);
    CHECK(bn->strong_updates == 0);
  }
  forward_train(tape, net, random_image(2, 3, 8, 8, 2), BranchTag::Strong);
  for (auto& [name, bn] : net.bn_layers()) {
    CHECK(bn->weak_updates == 1);
    CHECK(bn->strong_updates == 1);
  }
  // Shared mode funnels the strong batch into the weak bank.
  forward_train(tape, net, random_image(2, 3, 8, 8, 3), BranchTag::Strong,
                BnMode::Shared);
  for (auto& [name, bn] : net.bn_layers()) {
    CHECK(bn->weak_updates == 2);
    CHECK(bn->strong_updates == 1);
  }
  // Evaluation touches nothing.
  forward_eval(net, random_image(2, 3, 8, 8, 4));
  for (auto& [name, bn] : net.bn_layers()) {
    CHECK(bn->weak_updates == 2);
    CHECK(bn->strong_updates == 1);
  }
}

TEST_CASE("whole-network gradients match finite differences") {
  for (std::uint64_t seed : {11u, 12u}) {
    MicroSegNet net = MicroSegNet::create(tiny_config(3, 3), seed);
    TensorPtr img = random_image(1, 3, 8, 8, seed * 977);
    std::vector<TensorPtr> inputs = net.parameters();
    inputs.push_back(img);
    auto fn = [&](Tape& tape, const std::vector<TensorPtr>& in) {
      return forward_train(tape, net, in.back(), BranchTag::Weak,
                           BnMode::Dsbn);
    };
    const double err = check_gradients(fn, inputs, 1e-5, seed);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("poly schedule hits its anchors") {
  CHECK(poly_lr(0.01, 0, 600) == 0.01);
  CHECK(poly_lr(0.01, 300, 600) ==
        doctest::Approx(0.01 * std::pow(0.5, 0.9)).epsilon(1e-12));
  CHECK(poly_lr(0.01, 300, 600) == doctest::Approx(0.0053588673).epsilon(1e-6));
  CHECK(poly_lr(0.01, 600, 600) == 0.0);
  double prev = 1e9;
  for (long i = 0; i <= 100; ++i) {
    const double lr = poly_lr(0.01, i, 100);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS_AS(poly_lr(0.01, 5, 0), config_error);
  CHECK_THROWS_AS(poly_lr(0.01, -1, 10), config_error);
  CHECK_THROWS_AS(poly_lr(0.01, 11, 10), config_error);
}

TEST_CASE("momentum sgd follows the velocity recurrence") {
  TensorPtr p = make_tensor({1}, 1.0, true);
  SgdState opt;
  opt.options.momentum = 0.9;
  opt.options.weight_decay = 0.0;
  p->ensure_grad();
  p->grad[0] = 1.0;
  sgd_step(opt, {p}, 0.1);
  CHECK(p->values[0] == doctest::Approx(0.9).epsilon(1e-15));
  p->grad[0] = 1.0;
  sgd_step(opt, {p}, 0.1);
  // v = 0.9 * 1 + 1 = 1.9, theta = 0.9 - 0.19.
  CHECK(p->values[0] == doctest::Approx(0.71).epsilon(1e-15));

  // Weight decay alone moves the parameter toward zero.
  TensorPtr q = make_tensor({1}, 1.0, true);
  SgdState opt2;
  opt2.options.momentum = 0.0;
  opt2.options.weight_decay = 0.1;
  sgd_step(opt2, {q}, 1.0);  // no gradient accumulated: g = 0
  CHECK(q->values[0] == doctest::Approx(0.9).epsilon(1e-15));

  SgdState opt3;
  sgd_step(opt3, {p, q}, 0.1);
  CHECK_THROWS_AS(sgd_step(opt3, {p}, 0.1), dimension_error);
}

TEST_CASE("checkpoints round-trip bitwise") {
  const fs::path dir =
      fs::temp_directory_path() / "sslseg_model_tests" / "ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);

  MicroSegNet net = MicroSegNet::create(tiny_config(4, 3), 5);
  // A couple of real steps make statistics, counters and velocity nontrivial.
  SgdState opt;
  std::vector<std::uint8_t> labels(2 * 8 * 8, 1);
  for (int step = 0; step < 3; ++step) {
    Tape tape;
    TensorPtr logits = forward_train(
        tape, net, random_image(2, 3, 8, 8, 100 + step),
        step % 2 ? BranchTag::Strong : BranchTag::Weak);
    LossOutput ce = cross_entropy(tape, logits, labels);
    tape.backward(ce.loss);
    sgd_step(opt, net.parameters(), 0.01);
    for (const TensorPtr& p : net.parameters()) p->zero_grad();
  }
  const std::string p1 = (dir / "a.ckpt").string();
  save_checkpoint(p1, net, &opt, 3);

  MicroSegNet other = MicroSegNet::create(tiny_config(4, 3), 999);
  SgdState opt2;
  CheckpointInfo info = load_checkpoint(p1, other, &opt2);
  CHECK(info.iter == 3);
  CHECK(info.had_optimizer);
  CHECK(other.stem_k->values == net.stem_k->values);
  CHECK(other.head_b->values == net.head_b->values);
  auto na = net.bn_layers();
  auto nb = other.bn_layers();
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(nb[i].second->weak_mean == na[i].second->weak_mean);
    CHECK(nb[i].second->weak_var == na[i].second->weak_var);
    CHECK(nb[i].second->strong_mean == na[i].second->strong_mean);
    CHECK(nb[i].second->strong_var == na[i].second->strong_var);
    CHECK(nb[i].second->weak_updates == na[i].second->weak_updates);
    CHECK(nb[i].second->strong_updates == na[i].second->strong_updates);
  }
  REQUIRE(opt2.velocity.size() == opt.velocity.size());
  for (std::size_t i = 0; i < opt.velocity.size(); ++i)
    CHECK(opt2.velocity[i] == opt.velocity[i]);

  // Re-saving the loaded state reproduces the file byte for byte.
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p2, other, &opt2, info.iter);
  CHECK(slurp(p1) == slurp(p2));

  // Loading without optimizer interest, or from a file saved without
  // optimizer state, clears the velocities.
  const std::string p3 = (dir / "c.ckpt").string();
  save_checkpoint(p3, net, nullptr, 7);
  SgdState opt3;
  opt3.velocity.resize(3);
  CheckpointInfo info3 = load_checkpoint(p3, other, &opt3);
  CHECK(info3.iter == 7);
  CHECK(!info3.had_optimizer);
  CHECK(opt3.velocity.empty());
}

TEST_CASE("checkpoint loading rejects mismatches and corruption") {
  const fs::path dir =
      fs::temp_directory_path() / "sslseg_model_tests" / "ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  MicroSegNet net = MicroSegNet::create(tiny_config(4, 3), 5);
  const std::string p = (dir / "net.ckpt").string();
  save_checkpoint(p, net);

  MicroSegNet wider = MicroSegNet::create(tiny_config(8, 3), 5);
  CHECK_THROWS_AS(load_checkpoint(p, wider), dimension_error);

  CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string(), net),
                  io_error);
  {
    std::ofstream bad(dir / "magic.ckpt", std::ios::binary);
    bad << "NOTACKPT\n";
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "magic.ckpt").string(), net),
                  format_error);
  {
    std::vector<char> bytes = slurp(p);
    bytes.resize(bytes.size() / 2);
    std::ofstream cut(dir / "cut.ckpt", std::ios::binary);
    cut.write(bytes.data(), static_cast<long>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "cut.ckpt").string(), net),
                  format_error);
}

TEST_CASE("the network can memorize a single scene") {
  MicroSegNet net = MicroSegNet::create(tiny_config(8, 3), 21);
  // Three vertical stripes, one per class, over a matching colored image.
  const int size = 32;
  TensorPtr img = make_tensor({1, 3, size, size});
  std::vector<std::uint8_t> labels(size * size);
  Rng rng(4);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int cls = x / 11;
      labels[static_cast<std::size_t>(y) * size + x] =
          static_cast<std::uint8_t>(cls);
      for (int c = 0; c < 3; ++c)
        img->values[static_cast<std::size_t>(
            img->offset4(0, c, y, x))] =
            (c == cls ? 0.8 : 0.1) + rng.uniform(-0.05, 0.05);
    }

  SgdState opt;
  const long iters = 200;
  double final_loss = 1e9;
  for (long it = 0; it < iters; ++it) {
    Tape tape;
    TensorPtr logits = forward_train(tape, net, img, BranchTag::Weak);
    LossOutput ce = cross_entropy(tape, logits, labels);
    tape.backward(ce.loss);
    sgd_step(opt, net.parameters(), poly_lr(0.05, it, iters));
    for (const TensorPtr& p : net.parameters()) p->zero_grad();
    final_loss = ce.loss->values[0];
  }
  CHECK(final_loss < 0.05);
}
