#include "sslseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sslseg/errors.hpp"

namespace sslseg {

const std::array<PhotometricOp, kPhotometricPoolSize>& photometric_pool() {
  static const std::array<PhotometricOp, kPhotometricPoolSize> pool = {
      PhotometricOp::ContrastGamma,   PhotometricOp::ContrastLinear,
      PhotometricOp::Brightness,      PhotometricOp::BrightnessChannel,
      PhotometricOp::Equalize,        PhotometricOp::Hsv,
      PhotometricOp::InvertChannel,   PhotometricOp::Blur,
      PhotometricOp::NoiseGau,        PhotometricOp::NoisePos,
      PhotometricOp::ChannelShuffle,  PhotometricOp::Dropout,
      PhotometricOp::CoarseDropout,   PhotometricOp::Multiply,
      PhotometricOp::SaltPepper,      PhotometricOp::Solarize,
      PhotometricOp::JpegCompression,
  };
  return pool;
}

const char* op_name(PhotometricOp op) {
  switch (op) {
    case PhotometricOp::ContrastGamma: return "contrast gamma";
    case PhotometricOp::ContrastLinear: return "contrast linear";
    case PhotometricOp::Brightness: return "brightness";
    case PhotometricOp::BrightnessChannel: return "brightness channel";
    case PhotometricOp::Equalize: return "equalize";
    case PhotometricOp::Hsv: return "hsv";
    case PhotometricOp::InvertChannel: return "invert channel";
    case PhotometricOp::Blur: return "blur";
    case PhotometricOp::NoiseGau: return "noise gau";
    case PhotometricOp::NoisePos: return "noise pos";
    case PhotometricOp::ChannelShuffle: return "channel shuffle";
    case PhotometricOp::Dropout: return "dropout";
    case PhotometricOp::CoarseDropout: return "coarse dropout";
    case PhotometricOp::Multiply: return "multiply";
    case PhotometricOp::SaltPepper: return "salt pepper";
    case PhotometricOp::Solarize: return "solarize";
    case PhotometricOp::JpegCompression: return "jpeg compression";
  }
  return "unknown";
}

void validate_ranges(const AugmentRanges& r) {
  auto ordered = [](double lo, double hi, const char* what) {
    if (!(lo <= hi))
      throw config_error(std::string("augment range ") + what +
                         " has min > max");
  };
  ordered(r.contrast_gamma_min, r.contrast_gamma_max, "contrast gamma");
  ordered(r.contrast_linear_min, r.contrast_linear_max, "contrast linear");
  ordered(r.saturation_min, r.saturation_max, "saturation");
  ordered(r.blur_sigma_min, r.blur_sigma_max, "blur sigma");
  ordered(r.noise_gau_min, r.noise_gau_max, "noise gau");
  ordered(r.dropout_min, r.dropout_max, "dropout");
  ordered(r.multiply_min, r.multiply_max, "multiply");
  ordered(r.salt_pepper_min, r.salt_pepper_max, "salt pepper");
  ordered(r.solarize_min, r.solarize_max, "solarize");
  ordered(r.scale_min, r.scale_max, "scale");
  if (r.contrast_gamma_min <= 0.0)
    throw config_error("augment: contrast gamma must be positive");
  if (r.blur_sigma_min <= 0.0)
    throw config_error("augment: blur sigma must be positive");
  if (r.brightness_delta < 0.0 || r.hue_shift < 0.0)
    throw config_error("augment: deltas must be non-negative");
  if (r.dropout_min < 0.0 || r.dropout_max > 1.0 || r.salt_pepper_min < 0.0 ||
      r.salt_pepper_max > 1.0)
    throw config_error("augment: pixel fractions must lie in [0, 1]");
  if (r.coarse_dropout_max_rects < 1)
    throw config_error("augment: coarse dropout needs at least one rect");
  if (r.coarse_dropout_max_frac <= 0.0 || r.coarse_dropout_max_frac > 1.0)
    throw config_error("augment: coarse dropout extent must lie in (0, 1]");
  if (r.jpeg_quality_min < 1 || r.jpeg_quality_max > 100 ||
      r.jpeg_quality_min > r.jpeg_quality_max)
    throw config_error("augment: jpeg quality must lie in [1, 100]");
  if (r.flip_prob < 0.0 || r.flip_prob > 1.0)
    throw config_error("augment: flip probability must lie in [0, 1]");
  if (r.scale_min <= 0.0)
    throw config_error("augment: scale must be positive");
}

std::vector<PhotometricOp> sample_policy(int n_ops, Rng& rng) {
  if (n_ops < 1 || n_ops > kPhotometricPoolSize)
    throw config_error("sample_policy: n_ops must lie in [1, " +
                       std::to_string(kPhotometricPoolSize) + "], got " +
                       std::to_string(n_ops));
  std::vector<PhotometricOp> policy;
  policy.reserve(static_cast<std::size_t>(n_ops));
  for (int i = 0; i < n_ops; ++i)
    policy.push_back(photometric_pool()[static_cast<std::size_t>(
        rng.uniform_int(kPhotometricPoolSize))]);
  return policy;
}

namespace {

void clamp01(ImageF& img) {
  for (double& v : img.data) v = std::min(1.0, std::max(0.0, v));
}

// --- color space ---------------------------------------------------------

void rgb_to_hsv(double r, double g, double b, double& h, double& s,
                double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0 + (b - r) / d;
  else
    h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g,
                double& b) {
  if (s <= 0.0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = std::min(5, static_cast<int>(hh));
  const double f = hh - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// --- individual photometric ops ------------------------------------------

void op_equalize(ImageF& img) {
  const long n = img.pixels();
  if (n == 0) return;
  for (int c = 0; c < 3; ++c) {
    int hist[256] = {0};
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const int bin = static_cast<int>(
            std::lround(std::min(1.0, std::max(0.0, img.at(y, x, c))) * 255.0));
        ++hist[bin];
      }
    long cdf[256];
    long acc = 0;
    for (int i = 0; i < 256; ++i) {
      acc += hist[i];
      cdf[i] = acc;
    }
    long cdf_min = 0;
    for (int i = 0; i < 256; ++i)
      if (cdf[i] > 0) {
        cdf_min = cdf[i];
        break;
      }
    if (cdf_min == n) continue;  // constant channel
    const double denom = static_cast<double>(n - cdf_min);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const int bin = static_cast<int>(
            std::lround(std::min(1.0, std::max(0.0, img.at(y, x, c))) * 255.0));
        img.at(y, x, c) = static_cast<double>(cdf[bin] - cdf_min) / denom;
      }
  }
}

void op_blur(ImageF& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    w[static_cast<std::size_t>(i + radius)] = v;
    norm += v;
  }
  for (double& v : w) v /= norm;

  const int H = img.height, W = img.width;
  ImageF tmp(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::min(W - 1, std::max(0, x + i));
          acc += w[static_cast<std::size_t>(i + radius)] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::min(H - 1, std::max(0, y + i));
          acc += w[static_cast<std::size_t>(i + radius)] * tmp.at(yy, x, c);
        }
        img.at(y, x, c) = acc;
      }
}

// --- jpeg round trip ------------------------------------------------------

constexpr int kLumaQ[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr int kChromaQ[64] = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

void dct8(const double in[8], double out[8]) {
  for (int u = 0; u < 8; ++u) {
    double acc = 0.0;
    for (int x = 0; x < 8; ++x)
      acc += in[x] * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
    out[u] = 0.5 * cu * acc;
  }
}

void idct8(const double in[8], double out[8]) {
  for (int x = 0; x < 8; ++x) {
    double acc = 0.0;
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
      acc += cu * in[u] * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    out[x] = 0.5 * acc;
  }
}

void jpeg_plane(std::vector<double>& plane, int H, int W, const int* base_q,
                int quality) {
  // Standard quality-to-table scaling.
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  double q[64];
  for (int i = 0; i < 64; ++i)
    q[i] = std::min(255.0,
                    std::max(1.0, std::floor((base_q[i] * scale + 50) / 100.0)));

  const int BH = (H + 7) / 8, BW = (W + 7) / 8;
  for (int by = 0; by < BH; ++by)
    for (int bx = 0; bx < BW; ++bx) {
      double block[64], tmp[64];
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const int sy = std::min(H - 1, by * 8 + y);
          const int sx = std::min(W - 1, bx * 8 + x);
          block[y * 8 + x] =
              plane[static_cast<std::size_t>(sy) * W + sx] - 128.0;
        }
      // 2-d DCT, rows then columns.
      for (int y = 0; y < 8; ++y) dct8(block + y * 8, tmp + y * 8);
      for (int x = 0; x < 8; ++x) {
        double col[8], out[8];
        for (int y = 0; y < 8; ++y) col[y] = tmp[y * 8 + x];
        dct8(col, out);
        for (int y = 0; y < 8; ++y) tmp[y * 8 + x] = out[y];
      }
      for (int i = 0; i < 64; ++i)
        tmp[i] = std::round(tmp[i] / q[i]) * q[i];
      // Inverse, columns then rows.
      for (int x = 0; x < 8; ++x) {
        double col[8], out[8];
        for (int y = 0; y < 8; ++y) col[y] = tmp[y * 8 + x];
        idct8(col, out);
        for (int y = 0; y < 8; ++y) tmp[y * 8 + x] = out[y];
      }
      for (int y = 0; y < 8; ++y) idct8(tmp + y * 8, block + y * 8);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const int sy = by * 8 + y, sx = bx * 8 + x;
          if (sy < H && sx < W)
            plane[static_cast<std::size_t>(sy) * W + sx] =
                block[y * 8 + x] + 128.0;
        }
    }
}

void op_jpeg(ImageF& img, int quality) {
  const int H = img.height, W = img.width;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  std::vector<double> Y(n), Cb(n), Cr(n);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double r = img.at(y, x, 0) * 255.0;
      const double g = img.at(y, x, 1) * 255.0;
      const double b = img.at(y, x, 2) * 255.0;
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      Y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
      Cb[i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
      Cr[i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
  jpeg_plane(Y, H, W, kLumaQ, quality);
  jpeg_plane(Cb, H, W, kChromaQ, quality);
  jpeg_plane(Cr, H, W, kChromaQ, quality);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const double cb = Cb[i] - 128.0, cr = Cr[i] - 128.0;
      double r = Y[i] + 1.402 * cr;
      double g = Y[i] - 0.344136 * cb - 0.714136 * cr;
      double b = Y[i] + 1.772 * cb;
      img.at(y, x, 0) = std::min(1.0, std::max(0.0, r / 255.0));
      img.at(y, x, 1) = std::min(1.0, std::max(0.0, g / 255.0));
      img.at(y, x, 2) = std::min(1.0, std::max(0.0, b / 255.0));
    }
}

}  // namespace

void apply_photometric(ImageF& img, PhotometricOp op, const AugmentRanges& r,
                       Rng& rng) {
  clamp01(img);
  switch (op) {
    case PhotometricOp::ContrastGamma: {
      const double g = rng.uniform(r.contrast_gamma_min, r.contrast_gamma_max);
      for (double& v : img.data) v = std::pow(v, g);
      break;
    }
    case PhotometricOp::ContrastLinear: {
      const double a = rng.uniform(r.contrast_linear_min,
                                   r.contrast_linear_max);
      for (double& v : img.data) v = (v - 0.5) * a + 0.5;
      break;
    }
    case PhotometricOp::Brightness: {
      const double d = rng.uniform(-r.brightness_delta, r.brightness_delta);
      for (double& v : img.data) v += d;
      break;
    }
    case PhotometricOp::BrightnessChannel: {
      const int c = rng.uniform_int(3);
      const double d = rng.uniform(-r.brightness_delta, r.brightness_delta);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) img.at(y, x, c) += d;
      break;
    }
    case PhotometricOp::Equalize:
      op_equalize(img);
      break;
    case PhotometricOp::Hsv: {
      const double dh = rng.uniform(-r.hue_shift, r.hue_shift);
      const double sf = rng.uniform(r.saturation_min, r.saturation_max);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          double h, s, v;
          rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h, s,
                     v);
          h += dh;
          s = std::min(1.0, std::max(0.0, s * sf));
          hsv_to_rgb(h, s, v, img.at(y, x, 0), img.at(y, x, 1),
                     img.at(y, x, 2));
        }
      break;
    }
    case PhotometricOp::InvertChannel: {
      const int c = rng.uniform_int(3);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          img.at(y, x, c) = 1.0 - img.at(y, x, c);
      break;
    }
    case PhotometricOp::Blur:
      op_blur(img, rng.uniform(r.blur_sigma_min, r.blur_sigma_max));
      break;
    case PhotometricOp::NoiseGau: {
      const double sigma = rng.uniform(r.noise_gau_min, r.noise_gau_max);
      for (double& v : img.data) v += rng.normal(0.0, sigma);
      break;
    }
    case PhotometricOp::NoisePos: {
      for (double& v : img.data)
        v = static_cast<double>(rng.poisson(v * 255.0)) / 255.0;
      break;
    }
    case PhotometricOp::ChannelShuffle: {
      static constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                          {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
      const int* p = kPerm[rng.uniform_int(6)];
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const double a = img.at(y, x, 0), b = img.at(y, x, 1),
                       c = img.at(y, x, 2);
          const double src[3] = {a, b, c};
          for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = src[p[ch]];
        }
      break;
    }
    case PhotometricOp::Dropout: {
      const double p = rng.uniform(r.dropout_min, r.dropout_max);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (rng.uniform() < p)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.0;
      break;
    }
    case PhotometricOp::CoarseDropout: {
      const int rects = rng.uniform_int(1, r.coarse_dropout_max_rects);
      for (int i = 0; i < rects; ++i) {
        const int max_h = std::max(
            1, static_cast<int>(img.height * r.coarse_dropout_max_frac));
        const int max_w = std::max(
            1, static_cast<int>(img.width * r.coarse_dropout_max_frac));
        const int rh = rng.uniform_int(1, max_h);
        const int rw = rng.uniform_int(1, max_w);
        const int y0 = rng.uniform_int(0, std::max(0, img.height - rh));
        const int x0 = rng.uniform_int(0, std::max(0, img.width - rw));
        for (int y = y0; y < std::min(img.height, y0 + rh); ++y)
          for (int x = x0; x < std::min(img.width, x0 + rw); ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.0;
      }
      break;
    }
    case PhotometricOp::Multiply: {
      const double m = rng.uniform(r.multiply_min, r.multiply_max);
      for (double& v : img.data) v *= m;
      break;
    }
    case PhotometricOp::SaltPepper: {
      const double p = rng.uniform(r.salt_pepper_min, r.salt_pepper_max);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (rng.uniform() < p) {
            const double v = rng.uniform() < 0.5 ? 0.0 : 1.0;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
          }
      break;
    }
    case PhotometricOp::Solarize: {
      const double t = rng.uniform(r.solarize_min, r.solarize_max);
      for (double& v : img.data)
        if (v >= t) v = 1.0 - v;
      break;
    }
    case PhotometricOp::JpegCompression:
      op_jpeg(img, rng.uniform_int(r.jpeg_quality_min, r.jpeg_quality_max));
      break;
  }
  for (double v : img.data)
    if (!std::isfinite(v))
      throw numeric_error(std::string("apply_photometric: ") + op_name(op) +
                          " produced a non-finite value");
}

GeomParams sample_geom(Rng& rng, int in_h, int in_w, int crop_h, int crop_w,
                       const AugmentRanges& r) {
  if (in_h < 1 || in_w < 1 || crop_h < 1 || crop_w < 1)
    throw geometry_error("sample_geom: empty image or crop");
  GeomParams g;
  g.scale = rng.uniform(r.scale_min, r.scale_max);
  g.flip = rng.uniform() < r.flip_prob;
  g.scaled_h = std::max(1, static_cast<int>(std::lround(in_h * g.scale)));
  g.scaled_w = std::max(1, static_cast<int>(std::lround(in_w * g.scale)));
  g.crop_h = crop_h;
  g.crop_w = crop_w;
  if (!r.pad_to_crop && (g.scaled_h < crop_h || g.scaled_w < crop_w))
    throw geometry_error(
        "sample_geom: crop " + std::to_string(crop_h) + "x" +
        std::to_string(crop_w) + " exceeds scaled image " +
        std::to_string(g.scaled_h) + "x" + std::to_string(g.scaled_w) +
        " and padding is disabled");
  const int lo_y = std::min(0, g.scaled_h - crop_h);
  const int hi_y = std::max(0, g.scaled_h - crop_h);
  const int lo_x = std::min(0, g.scaled_w - crop_w);
  const int hi_x = std::max(0, g.scaled_w - crop_w);
  g.offset_y = rng.uniform_int(lo_y, hi_y);
  g.offset_x = rng.uniform_int(lo_x, hi_x);
  return g;
}

namespace {

ImageF resize_image(const ImageF& img, int oh, int ow) {
  ImageF out(oh, ow);
  const int H = img.height, W = img.width;
  for (int y = 0; y < oh; ++y) {
    double sy = (y + 0.5) * H / oh - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      double sx = (x + 0.5) * W / ow - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top =
            img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
        const double bot =
            img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

LabelMap resize_label(const LabelMap& lab, int oh, int ow) {
  LabelMap out(oh, ow);
  const int H = lab.height, W = lab.width;
  for (int y = 0; y < oh; ++y) {
    const double sy = (y + 0.5) * H / oh - 0.5;
    int iy = static_cast<int>(std::lround(sy));
    iy = std::min(H - 1, std::max(0, iy));
    for (int x = 0; x < ow; ++x) {
      const double sx = (x + 0.5) * W / ow - 0.5;
      int ix = static_cast<int>(std::lround(sx));
      ix = std::min(W - 1, std::max(0, ix));
      out.at(y, x) = lab.at(iy, ix);
    }
  }
  return out;
}

}  // namespace

void apply_geom(const ImageF& img, const LabelMap& lab, const GeomParams& g,
                ImageF& out_img, LabelMap& out_lab) {
  if (img.height != lab.height || img.width != lab.width)
    throw dimension_error("apply_geom: image and label sizes differ");
  ImageF scaled = (g.scaled_h == img.height && g.scaled_w == img.width)
                      ? img
                      : resize_image(img, g.scaled_h, g.scaled_w);
  LabelMap slab = (g.scaled_h == lab.height && g.scaled_w == lab.width)
                      ? lab
                      : resize_label(lab, g.scaled_h, g.scaled_w);
  if (g.flip) {
    for (int y = 0; y < scaled.height; ++y)
      for (int x = 0; x < scaled.width / 2; ++x) {
        const int mx = scaled.width - 1 - x;
        for (int c = 0; c < 3; ++c)
          std::swap(scaled.at(y, x, c), scaled.at(y, mx, c));
        std::swap(slab.at(y, x), slab.at(y, mx));
      }
  }
  out_img = ImageF(g.crop_h, g.crop_w, 0.0);
  out_lab = LabelMap(g.crop_h, g.crop_w, 255);
  for (int y = 0; y < g.crop_h; ++y) {
    const int sy = y + g.offset_y;
    if (sy < 0 || sy >= scaled.height) continue;
    for (int x = 0; x < g.crop_w; ++x) {
      const int sx = x + g.offset_x;
      if (sx < 0 || sx >= scaled.width) continue;
      for (int c = 0; c < 3; ++c) out_img.at(y, x, c) = scaled.at(sy, sx, c);
      out_lab.at(y, x) = slab.at(sy, sx);
    }
  }
}

void subtract_means(ImageF& img, const std::array<double, 3>& means) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) -= means[static_cast<std::size_t>(c)];
}

void apply_weak(const ImageF& img, const LabelMap& lab, int crop_h, int crop_w,
                const std::array<double, 3>& means, const AugmentRanges& r,
                Rng& rng, ImageF& out_img, LabelMap& out_lab) {
  validate_ranges(r);
  GeomParams g = sample_geom(rng, img.height, img.width, crop_h, crop_w, r);
  apply_geom(img, lab, g, out_img, out_lab);
  subtract_means(out_img, means);
}

void apply_strong(const ImageF& img, const LabelMap& lab,
                  const std::vector<PhotometricOp>& policy, int crop_h,
                  int crop_w, const std::array<double, 3>& means,
                  const AugmentRanges& r, Rng& rng, ImageF& out_img,
                  LabelMap& out_lab) {
  validate_ranges(r);
  ImageF work = img;
  for (PhotometricOp op : policy) apply_photometric(work, op, r, rng);
  GeomParams g = sample_geom(rng, work.height, work.width, crop_h, crop_w, r);
  apply_geom(work, lab, g, out_img, out_lab);
  subtract_means(out_img, means);
}

}  // namespace sslseg
