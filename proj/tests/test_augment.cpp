#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "sslseg/augment.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"

using namespace sslseg;

namespace {

ImageF random_image(int h, int w, Rng& rng) {
  ImageF img(h, w);
  for (double& v : img.data)
    v = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  return img;
}

LabelMap random_label(int h, int w, int classes, Rng& rng) {
  LabelMap lab(h, w);
  for (auto& v : lab.data)
    v = static_cast<std::uint8_t>(rng.uniform_int(classes));
  return lab;
}

}  // namespace

TEST_CASE("the photometric pool holds 17 distinct ops") {
  const auto& pool = photometric_pool();
  CHECK(pool.size() == 17);
  std::set<PhotometricOp> unique(pool.begin(), pool.end());
  CHECK(unique.size() == 17);
  std::set<std::string> names;
  for (PhotometricOp op : pool) names.insert(op_name(op));
  CHECK(names.size() == 17);
}

TEST_CASE("sample_policy draws uniformly with replacement") {
  Rng rng(101);
  auto policy = sample_policy(2, rng);
  CHECK(policy.size() == 2);

  // Binomial check: 17000 single-op draws, each op lands near 1000.
  std::map<PhotometricOp, int> counts;
  Rng rng2(4242);
  for (int i = 0; i < 17000; ++i) {
    auto p = sample_policy(1, rng2);
    ++counts[p[0]];
  }
  CHECK(counts.size() == 17);
  for (const auto& [op, n] : counts) {
    CAPTURE(op_name(op));
    CHECK(n > 1000 - 120);
    CHECK(n < 1000 + 120);
  }
}

TEST_CASE("sample_policy rejects out-of-range op counts") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_policy(0, rng), config_error);
  CHECK_THROWS_AS(sample_policy(18, rng), config_error);
}

TEST_CASE("identity settings reproduce the input exactly") {
  Rng data_rng(11);
  ImageF img = random_image(6, 8, data_rng);
  LabelMap lab = random_label(6, 8, 4, data_rng);
  AugmentRanges r;
  r.scale_min = r.scale_max = 1.0;
  r.flip_prob = 0.0;
  ImageF out_img;
  LabelMap out_lab;
  Rng rng(5);
  apply_weak(img, lab, 6, 8, {0.0, 0.0, 0.0}, r, rng, out_img, out_lab);
  CHECK(out_img.data == img.data);
  CHECK(out_lab.data == lab.data);
}

TEST_CASE("augmentation is deterministic in the seed") {
  Rng data_rng(12);
  ImageF img = random_image(10, 10, data_rng);
  LabelMap lab = random_label(10, 10, 4, data_rng);
  AugmentRanges r;
  for (int variant = 0; variant < 2; ++variant) {
    Rng ra(777), rb(777);
    auto pa = sample_policy(3, ra);
    auto pb = sample_policy(3, rb);
    REQUIRE(pa == pb);
    ImageF ia, ib;
    LabelMap la, lb;
    apply_strong(img, lab, pa, 8, 8, {0.1, 0.2, 0.3}, r, ra, ia, la);
    apply_strong(img, lab, pb, 8, 8, {0.1, 0.2, 0.3}, r, rb, ib, lb);
    CHECK(ia.data == ib.data);
    CHECK(la.data == lb.data);
  }
}

TEST_CASE("photometric ops never move labels") {
  Rng data_rng(13);
  ImageF img = random_image(8, 8, data_rng);
  LabelMap lab = random_label(8, 8, 4, data_rng);
  AugmentRanges r;
  r.scale_min = r.scale_max = 1.0;
  r.flip_prob = 0.0;
  Rng rng(99);
  for (PhotometricOp op : photometric_pool()) {
    CAPTURE(op_name(op));
    ImageF out_img;
    LabelMap out_lab;
    apply_strong(img, lab, {op}, 8, 8, {0.0, 0.0, 0.0}, r, rng, out_img,
                 out_lab);
    CHECK(out_lab.data == lab.data);
  }
}

TEST_CASE("every photometric op keeps values finite on random inputs") {
  Rng rng(14);
  AugmentRanges r;
  for (PhotometricOp op : photometric_pool()) {
    CAPTURE(op_name(op));
    for (int trial = 0; trial < 8; ++trial) {
      ImageF img = random_image(9, 7, rng);
      apply_photometric(img, op, r, rng);
      for (double v : img.data) REQUIRE(std::isfinite(v));
    }
  }
}

TEST_CASE("brightness shifts every sample by one constant") {
  ImageF img(4, 4, 0.5);
  AugmentRanges r;
  Rng rng(3);
  apply_photometric(img, PhotometricOp::Brightness, r, rng);
  const double d = img.data[0] - 0.5;
  CHECK(std::abs(d) <= r.brightness_delta);
  for (double v : img.data) CHECK(v == img.data[0]);
}

TEST_CASE("double channel inversion restores the image") {
  Rng data_rng(15);
  ImageF img = random_image(5, 5, data_rng);
  ImageF orig = img;
  Rng r1(42), r2(42);  // identical streams pick the same channel
  AugmentRanges r;
  apply_photometric(img, PhotometricOp::InvertChannel, r, r1);
  CHECK(img.data != orig.data);
  apply_photometric(img, PhotometricOp::InvertChannel, r, r2);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(img.data[i] == doctest::Approx(orig.data[i]).epsilon(1e-14));
}

TEST_CASE("blur preserves constant images and averages locally") {
  ImageF img(8, 8, 0.42);
  AugmentRanges r;
  Rng rng(5);
  apply_photometric(img, PhotometricOp::Blur, r, rng);
  for (double v : img.data) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("best-quality jpeg round trip is nearly lossless") {
  Rng data_rng(16);
  ImageF img = random_image(20, 20, data_rng);
  ImageF orig = img;
  AugmentRanges r;
  r.jpeg_quality_min = r.jpeg_quality_max = 100;
  Rng rng(7);
  apply_photometric(img, PhotometricOp::JpegCompression, r, rng);
  double err = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i)
    err += std::abs(img.data[i] - orig.data[i]);
  err /= static_cast<double>(img.data.size());
  CHECK(err < 0.02);
}

TEST_CASE("low-quality jpeg actually distorts") {
  Rng data_rng(17);
  ImageF img = random_image(16, 16, data_rng);
  ImageF orig = img;
  AugmentRanges r;
  r.jpeg_quality_min = r.jpeg_quality_max = 30;
  Rng rng(7);
  apply_photometric(img, PhotometricOp::JpegCompression, r, rng);
  double err = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i)
    err += std::abs(img.data[i] - orig.data[i]);
  err /= static_cast<double>(img.data.size());
  CHECK(err > 0.02);
}

TEST_CASE("dropout zeroes roughly the sampled fraction") {
  ImageF img(64, 64, 1.0);
  AugmentRanges r;
  r.dropout_min = r.dropout_max = 0.1;
  Rng rng(9);
  apply_photometric(img, PhotometricOp::Dropout, r, rng);
  long zeros = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (img.at(y, x, 0) == 0.0) {
        ++zeros;
        // Dropout acts on whole pixels.
        CHECK(img.at(y, x, 1) == 0.0);
        CHECK(img.at(y, x, 2) == 0.0);
      }
  CHECK(zeros > 250);
  CHECK(zeros < 600);
}

TEST_CASE("solarize flips only values above its threshold") {
  ImageF img(2, 2);
  img.data = {0.1, 0.2, 0.3, 0.5, 0.6, 0.7, 0.9, 0.91, 0.92, 0.2, 0.95, 0.0};
  AugmentRanges r;
  r.solarize_min = r.solarize_max = 0.5;
  Rng rng(1);
  apply_photometric(img, PhotometricOp::Solarize, r, rng);
  CHECK(img.data[0] == 0.1);
  CHECK(img.data[3] == doctest::Approx(0.5));  // 0.5 >= t flips to 0.5
  CHECK(img.data[4] == doctest::Approx(0.4));
  CHECK(img.data[6] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("geometry produces the requested crop with padding markers") {
  ImageF img(4, 4, 0.8);
  LabelMap lab(4, 4, 1);
  GeomParams g;
  g.scale = 1.0;
  g.scaled_h = g.scaled_w = 4;
  g.crop_h = g.crop_w = 8;
  g.offset_y = g.offset_x = -2;
  ImageF out_img;
  LabelMap out_lab;
  apply_geom(img, lab, g, out_img, out_lab);
  CHECK(out_img.height == 8);
  CHECK(out_lab.width == 8);
  CHECK(out_lab.at(0, 0) == 255);
  CHECK(out_img.at(0, 0, 0) == 0.0);
  CHECK(out_lab.at(3, 3) == 1);
  CHECK(out_img.at(3, 3, 0) == 0.8);
  CHECK(out_lab.at(7, 7) == 255);
}

TEST_CASE("disabling padding turns undersized crops into errors") {
  AugmentRanges r;
  r.pad_to_crop = false;
  r.scale_min = r.scale_max = 1.0;
  Rng rng(3);
  CHECK_THROWS_AS(sample_geom(rng, 4, 4, 8, 8, r), geometry_error);
  // With padding enabled the same request succeeds.
  AugmentRanges r2;
  r2.scale_min = r2.scale_max = 1.0;
  Rng rng2(3);
  auto g = sample_geom(rng2, 4, 4, 8, 8, r2);
  CHECK(g.offset_y <= 0);
}

TEST_CASE("mirror flip applied twice is the identity") {
  Rng data_rng(18);
  ImageF img = random_image(5, 6, data_rng);
  LabelMap lab = random_label(5, 6, 4, data_rng);
  GeomParams g;
  g.scale = 1.0;
  g.flip = true;
  g.scaled_h = 5;
  g.scaled_w = 6;
  g.crop_h = 5;
  g.crop_w = 6;
  ImageF once, twice;
  LabelMap lonce, ltwice;
  apply_geom(img, lab, g, once, lonce);
  CHECK(once.data != img.data);
  apply_geom(once, lonce, g, twice, ltwice);
  CHECK(twice.data == img.data);
  CHECK(ltwice.data == lab.data);
}

TEST_CASE("label resizing never invents classes") {
  LabelMap lab(6, 6, 0);
  lab.at(1, 1) = 3;
  lab.at(4, 4) = 255;
  ImageF img(6, 6, 0.5);
  GeomParams g;
  g.scale = 1.7;
  g.scaled_h = 10;
  g.scaled_w = 10;
  g.crop_h = 10;
  g.crop_w = 10;
  ImageF out_img;
  LabelMap out_lab;
  apply_geom(img, lab, g, out_img, out_lab);
  for (std::uint8_t v : out_lab.data)
    CHECK((v == 0 || v == 3 || v == 255));
}

TEST_CASE("mean subtraction is exact per channel") {
  ImageF img(2, 2, 0.5);
  subtract_means(img, {0.1, 0.2, 0.3});
  CHECK(img.at(0, 0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(img.at(1, 1, 1) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(img.at(1, 0, 2) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("strong pipeline emits the crop size for any scale draw") {
  Rng data_rng(19);
  AugmentRanges r;
  Rng rng(20);
  for (int trial = 0; trial < 30; ++trial) {
    ImageF img = random_image(12, 9, data_rng);
    LabelMap lab = random_label(12, 9, 4, data_rng);
    auto policy = sample_policy(2, rng);
    ImageF out_img;
    LabelMap out_lab;
    apply_strong(img, lab, policy, 8, 8, {0.3, 0.3, 0.3}, r, rng, out_img,
                 out_lab);
    REQUIRE(out_img.height == 8);
    REQUIRE(out_img.width == 8);
    REQUIRE(out_lab.height == 8);
    for (double v : out_img.data) REQUIRE(std::isfinite(v));
    for (std::uint8_t v : out_lab.data) REQUIRE((v < 4 || v == 255));
  }
}

TEST_CASE("invalid ranges are rejected") {
  AugmentRanges r;
  r.scale_min = 2.0;
  r.scale_max = 0.5;
  CHECK_THROWS_AS(validate_ranges(r), config_error);
  AugmentRanges r2;
  r2.jpeg_quality_min = 0;
  CHECK_THROWS_AS(validate_ranges(r2), config_error);
  AugmentRanges r3;
  r3.flip_prob = 1.5;
  CHECK_THROWS_AS(validate_ranges(r3), config_error);
}
