#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sslseg/augment.hpp"
#include "sslseg/datahub.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/ops.hpp"
#include "sslseg/pseudolabel.hpp"
#include "sslseg/rng.hpp"

using namespace sslseg;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(int features, int classes) {
  ModelConfig c;
  c.features = features;
  c.classes = classes;
  return c;
}

ImageF random_image(int h, int w, std::uint64_t seed) {
  ImageF img(h, w);
  Rng rng(seed);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

ImageF mirror(const ImageF& in) {
  ImageF out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = in.at(y, in.width - 1 - x, c);
  return out;
}

std::vector<double> mirror_chw(const std::vector<double>& p, int classes,
                               int h, int w) {
  std::vector<double> out(p.size());
  for (int c = 0; c < classes; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<std::size_t>(c) * h + y) * w + x] =
            p[(static_cast<std::size_t>(c) * h + y) * w + (w - 1 - x)];
  return out;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

const std::array<double, 3> kMeans{0.4, 0.5, 0.6};

}  // namespace

TEST_CASE("averaged probabilities stay a distribution at every pixel") {
  MicroSegNet net = MicroSegNet::create(small_config(4, 5), 2);
  const ImageF img = random_image(16, 20, 9);
  for (const TtaOptions& opts :
       {TtaOptions{}, TtaOptions{{1.0}, false}, TtaOptions{{0.5, 1.5}, true}}) {
    const std::vector<double> probs = tta_probabilities(net, img, kMeans, opts);
    REQUIRE(probs.size() == 5u * 16u * 20u);
    const long plane = 16 * 20;
    for (long px = 0; px < plane; ++px) {
      double total = 0;
      for (int c = 0; c < 5; ++c) {
        const double v = probs[static_cast<std::size_t>(c * plane + px)];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("a single native-scale view equals direct inference") {
  MicroSegNet net = MicroSegNet::create(small_config(4, 3), 5);
  ImageF img = random_image(12, 16, 11);
  TtaOptions opts;
  opts.scales = {1.0};
  opts.flip = false;
  const std::vector<double> probs = tta_probabilities(net, img, kMeans, opts);

  ImageF prepared = img;
  subtract_means(prepared, kMeans);
  TensorPtr in = image_batch_to_tensor({&prepared, 1});
  Tape silent;
  silent.set_recording(false);
  TensorPtr direct = softmax_channel(silent, forward_eval(net, in));
  REQUIRE(direct->numel() == static_cast<long>(probs.size()));
  for (std::size_t i = 0; i < probs.size(); ++i)
    CHECK(probs[i] == direct->values[i]);  // bitwise
}

TEST_CASE("mirror-averaged inference commutes with mirroring") {
  MicroSegNet net = MicroSegNet::create(small_config(4, 3), 7);
  const ImageF img = random_image(16, 16, 3);
  TtaOptions opts;  // default scales, flip on
  const std::vector<double> a = tta_probabilities(net, img, kMeans, opts);
  const std::vector<double> b =
      tta_probabilities(net, mirror(img), kMeans, opts);
  const std::vector<double> bm = mirror_chw(b, 3, 16, 16);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == doctest::Approx(bm[i]).epsilon(1e-12));
}

TEST_CASE("batched inference matches the single-image path bitwise") {
  MicroSegNet net = MicroSegNet::create(small_config(4, 4), 13);
  std::vector<ImageF> images;
  for (int i = 0; i < 5; ++i) images.push_back(random_image(8, 8, 50 + i));
  images.push_back(random_image(12, 8, 60));  // size change splits the chunk
  const std::vector<std::vector<double>> batch =
      tta_probabilities_batch(net, images, kMeans);
  REQUIRE(batch.size() == images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::vector<double> single =
        tta_probabilities(net, images[i], kMeans);
    REQUIRE(batch[i].size() == single.size());
    for (std::size_t j = 0; j < single.size(); ++j)
      CHECK(batch[i][j] == single[j]);
  }
}

TEST_CASE("invalid augmentation settings and images are rejected") {
  MicroSegNet net = MicroSegNet::create(small_config(4, 3), 1);
  const ImageF img = random_image(8, 8, 1);
  TtaOptions empty;
  empty.scales = {};
  CHECK_THROWS_AS(tta_probabilities(net, img, kMeans, empty), config_error);
  TtaOptions zero;
  zero.scales = {0.0};
  CHECK_THROWS_AS(tta_probabilities(net, img, kMeans, zero), config_error);
  CHECK_THROWS_AS(tta_probabilities(net, random_image(10, 8, 2), kMeans),
                  dimension_error);
}

TEST_CASE("hardening prefers the lowest class on ties") {
  // Pixel 0 ties classes 0 and 2; pixel 1 is clearly class 1.
  const std::vector<double> probs = {0.4, 0.1,   // class 0
                                     0.2, 0.8,   // class 1
                                     0.4, 0.1};  // class 2
  LabelMap lab = argmax_to_label(probs, 3, 1, 2);
  CHECK(lab.at(0, 0) == 0);
  CHECK(lab.at(0, 1) == 1);
}

TEST_CASE("pseudo labels land on every unlabeled row") {
  const fs::path root = fs::temp_directory_path() / "sslseg_pseudo_tests";
  fs::remove_all(root);
  SyntheticSpec spec;
  spec.image_size = 16;
  spec.seed = 3;
  const fs::path data = root / "data";
  std::vector<Sample> rows = generate_dataset(spec, 6, 2, data.string());
  std::vector<Sample> train(rows.begin(), rows.begin() + 6);
  std::vector<Sample> val(rows.begin() + 6, rows.end());
  auto [labeled, unlabeled] = split_labeled(train, 0.5, 99);
  std::vector<Sample> all = labeled;
  all.insert(all.end(), unlabeled.begin(), unlabeled.end());
  all.insert(all.end(), val.begin(), val.end());

  MicroSegNet net = MicroSegNet::create(small_config(4, spec.classes), 17);
  const std::array<double, 3> means = read_means((data / "means.txt").string());
  TtaOptions opts;
  opts.scales = {0.5, 1.0};

  SemiDatasetResult r1 =
      generate_semi_dataset(net, all, means, (root / "r1").string(), opts);
  CHECK(r1.failures.empty());
  REQUIRE(r1.samples.size() == all.size());
  int pseudo_count = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Sample& before = all[i];
    const Sample& after = r1.samples[i];
    CHECK(after.id == before.id);
    if (before.split == Split::TrainUnlabeled) {
      CHECK(after.provenance == Provenance::Pseudo);
      CHECK(!after.label_path.empty());
      LabelMap lab = read_label(after.label_path, spec.classes);
      CHECK(lab.height == spec.image_size);
      ++pseudo_count;
    } else {
      CHECK(after.label_path == before.label_path);
      CHECK(after.provenance == before.provenance);
    }
  }
  CHECK(pseudo_count == 3);
  // The manifest covers every row and is strict-readable.
  CHECK(read_manifest((root / "r1" / "manifest.tsv").string(), true).size() ==
        all.size());

  // One unlabeled sample recomputed by hand matches the stored file.
  const Sample* unl = nullptr;
  for (const Sample& s : r1.samples)
    if (s.provenance == Provenance::Pseudo) {
      unl = &s;
      break;
    }
  REQUIRE(unl != nullptr);
  ImageF img = read_image(unl->image_path);
  LabelMap direct = argmax_to_label(tta_probabilities(net, img, means, opts),
                                    spec.classes, img.height, img.width);
  CHECK(direct.data == read_label(unl->label_path).data);

  // Rerunning produces identical bytes.
  SemiDatasetResult r2 =
      generate_semi_dataset(net, all, means, (root / "r2").string(), opts);
  for (const Sample& s : r2.samples)
    if (s.provenance == Provenance::Pseudo) {
      const fs::path rel = fs::relative(s.label_path, root / "r2");
      CHECK(slurp(root / "r2" / rel) == slurp(root / "r1" / rel));
    }

  // A corrupted image is reported and skipped; the rest still succeed.
  {
    std::ofstream garbage(all[labeled.size()].image_path, std::ios::binary);
    garbage << "not a pixmap";
  }
  SemiDatasetResult r3 =
      generate_semi_dataset(net, all, means, (root / "r3").string(), opts);
  REQUIRE(r3.failures.size() == 1);
  CHECK(r3.failures[0].first == all[labeled.size()].id);
  int still_pseudo = 0;
  for (const Sample& s : r3.samples) {
    if (s.id == r3.failures[0].first) {
      CHECK(s.provenance == Provenance::None);
      CHECK(s.label_path.empty());
    } else if (s.provenance == Provenance::Pseudo) {
      ++still_pseudo;
    }
  }
  CHECK(still_pseudo == 2);
}
