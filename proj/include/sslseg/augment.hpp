#pragma once

#include <array>
#include <string>
#include <vector>

#include "sslseg/image.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

// Photometric pool for strong augmentation. Ops are sampled uniformly with
// replacement; every op reads its parameters from AugmentRanges.
enum class PhotometricOp {
  ContrastGamma,
  ContrastLinear,
  Brightness,
  BrightnessChannel,
  Equalize,
  Hsv,
  InvertChannel,
  Blur,
  NoiseGau,
  NoisePos,
  ChannelShuffle,
  Dropout,
  CoarseDropout,
  Multiply,
  SaltPepper,
  Solarize,
  JpegCompression,
};

inline constexpr int kPhotometricPoolSize = 17;
const std::array<PhotometricOp, kPhotometricPoolSize>& photometric_pool();
const char* op_name(PhotometricOp op);

// Parameter ranges for every augmentation, overridable through config.
struct AugmentRanges {
  double contrast_gamma_min = 0.5, contrast_gamma_max = 2.0;
  double contrast_linear_min = 0.5, contrast_linear_max = 1.5;
  double brightness_delta = 0.25;        // shift drawn from [-delta, delta]
  double hue_shift = 0.1;                // hue offset from [-shift, shift]
  double saturation_min = 0.5, saturation_max = 1.5;
  double blur_sigma_min = 0.5, blur_sigma_max = 2.0;
  double noise_gau_min = 0.01, noise_gau_max = 0.1;
  double dropout_min = 0.01, dropout_max = 0.1;
  int coarse_dropout_max_rects = 8;      // 1..max rectangles
  double coarse_dropout_max_frac = 0.2;  // per-dimension extent cap
  double multiply_min = 0.7, multiply_max = 1.3;
  double salt_pepper_min = 0.005, salt_pepper_max = 0.03;
  double solarize_min = 0.4, solarize_max = 0.8;
  int jpeg_quality_min = 30, jpeg_quality_max = 90;

  // Basic transforms shared by the weak and strong paths.
  double scale_min = 0.5, scale_max = 2.0;
  double flip_prob = 0.5;
  bool pad_to_crop = true;  // when false, undersized sources are an error

  bool operator==(const AugmentRanges&) const = default;
};

// Raises config_error when a range is inverted or out of its legal domain.
void validate_ranges(const AugmentRanges& r);

// Draws n_ops ops uniformly with replacement; requires 1 <= n_ops <= pool.
std::vector<PhotometricOp> sample_policy(int n_ops, Rng& rng);

// Applies one photometric op in place. The pixel values are clamped to
// [0, 1] on entry (several ops are only defined there); outputs may leave
// the range again (brightness, multiply, noise).
void apply_photometric(ImageF& img, PhotometricOp op, const AugmentRanges& r,
                       Rng& rng);

// Geometric parameters drawn once per sample: random scale, mirror flip,
// crop offsets (negative offsets mean padding). Draw order is fixed.
struct GeomParams {
  double scale = 1.0;
  bool flip = false;
  int offset_y = 0, offset_x = 0;  // crop origin in the scaled image
  int scaled_h = 0, scaled_w = 0;
  int crop_h = 0, crop_w = 0;
};

GeomParams sample_geom(Rng& rng, int in_h, int in_w, int crop_h, int crop_w,
                       const AugmentRanges& r);

// Bilinear image / nearest label resize, optional mirror, crop with zero
// image padding and ignore-index label padding.
void apply_geom(const ImageF& img, const LabelMap& lab, const GeomParams& g,
                ImageF& out_img, LabelMap& out_lab);

// Mean subtraction, the final normalization of every training input.
void subtract_means(ImageF& img, const std::array<double, 3>& means);

// Weak path: basic transforms only (scale, flip, crop, mean subtraction).
void apply_weak(const ImageF& img, const LabelMap& lab, int crop_h, int crop_w,
                const std::array<double, 3>& means, const AugmentRanges& r,
                Rng& rng, ImageF& out_img, LabelMap& out_lab);

// Strong path: the sampled photometric policy in order, then the same basic
// transforms. Labels pass through the photometric phase untouched.
void apply_strong(const ImageF& img, const LabelMap& lab,
                  const std::vector<PhotometricOp>& policy, int crop_h,
                  int crop_w, const std::array<double, 3>& means,
                  const AugmentRanges& r, Rng& rng, ImageF& out_img,
                  LabelMap& out_lab);

}  // namespace sslseg
